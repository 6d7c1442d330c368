"""Benchmark systems, clean simulation, FFT-domain noise injection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateReference, IntegrationDiverged
from .integrate import integrate_polynomial
from .library import SparseModel, build_polynomial_library, parse_term, variable_names


@dataclass(frozen=True)
class Trajectory:
    t0: float
    dt: float
    values: np.ndarray  # [n_timepoints, dim]
    clean_ref: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be 2-D [n_timepoints, dim]")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if values.shape[0] < 5:
            raise ValueError("trajectory needs at least 5 timepoints")
        if not np.all(np.isfinite(values)):
            raise ValueError("trajectory values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.clean_ref is not None:
            clean = np.array(self.clean_ref, dtype=float)
            if clean.shape != values.shape:
                raise ValueError("clean_ref shape mismatch")
            clean.setflags(write=False)
            object.__setattr__(self, "clean_ref", clean)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    def with_values(self, values) -> "Trajectory":
        return replace(self, values=values)

    def clean(self) -> "Trajectory":
        if self.clean_ref is None:
            raise ValueError("trajectory has no clean reference")
        return replace(self, values=self.clean_ref)


@dataclass(frozen=True)
class NoiseSpec:
    target_level_pct: float
    seed: int = 0
    hermitian: bool = False

    def __post_init__(self):
        if not math.isfinite(self.target_level_pct) or self.target_level_pct < 0:
            raise ValueError("target_level_pct must be finite and >= 0")


@dataclass(frozen=True)
class SystemSpec:
    name: str
    dim: int
    true_model: SparseModel
    default_ics: list = field(default_factory=list)
    val_ics: list = field(default_factory=list)
    duration: float = 10.0
    dt: float = 0.002
    max_degree: int = 2

    def __post_init__(self):
        if self.true_model.dim != self.dim:
            raise ValueError("true_model dimension mismatch")


def _system(name, equations, degree, ics, val_ics, duration, model_degree=None):
    dim = len(equations)
    names = variable_names(dim)
    lib = build_polynomial_library(dim, model_degree or degree)
    coef = np.zeros((dim, lib.n_terms))
    for j, eq in enumerate(equations):
        for term, c in eq.items():
            coef[j, lib.index(parse_term(term, names))] = c
    model = SparseModel(lib, coef)
    return SystemSpec(name, dim, model, [list(map(float, ic)) for ic in ics],
                      [list(map(float, ic)) for ic in val_ics], duration, 0.002, degree)


SYSTEMS = {
    "lorenz": _system(
        "lorenz",
        [{"x": -10.0, "y": 10.0}, {"x": 28.0, "y": -1.0, "x*z": -1.0}, {"z": -8.0 / 3.0, "x*y": 1.0}],
        2, [[-8, 8, 27], [5, -7, 29], [-2, 7, 21]], [[8, 7, 15], [-6, 12, 25]], 10.0,
    ),
    "linear3d": _system(
        "linear3d",
        [{"x": -0.1, "y": -2.0}, {"x": 2.0, "y": -0.1}, {"z": -0.3}],
        2, [[2, 0, 1], [4, -1, 2], [3, 3, 3]], [[3, 1, 1], [9, 1, 3]], 24.0,
    ),
    "harm_linear": _system(
        "harm_linear",
        [{"x": -0.1, "y": 2.0}, {"x": -2.0, "y": -0.1}],
        3, [[2, 0], [4, 1], [7, 1]], [[3, 2], [6, 3]], 28.0,
    ),
    "harm_cubic": _system(
        "harm_cubic",
        [{"x^3": -0.1, "y^3": 2.0}, {"x^3": -2.0, "y^3": -0.1}],
        5, [[2, 0], [4, 1], [7, 1]], [[3, 2], [6, 3]], 28.0,
    ),
    "hopf2d": _system(
        "hopf2d",
        [{"x": 0.2, "y": -1.0, "x^3": -1.0, "x*y^2": -1.0},
         {"x": 1.0, "y": 0.2, "x^2*y": -1.0, "y^3": -1.0}],
        5, [[1, 0.75], [0.9, -0.1], [0.25, 1]], [[0.1, -0.75], [0.5, -0.5]], 16.0,
    ),
}


def get_system(name: str) -> SystemSpec:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None


def n_timepoints(duration: float, dt: float) -> int:
    return int(math.floor(duration / dt + 1e-9)) + 1


def simulate(system: SystemSpec | SparseModel, ic, duration: float, dt: float,
             rtol: float = 1e-9, atol: float = 1e-9, state_bound: float = 1e6) -> Trajectory:
    """Integrate a polynomial system from ``ic`` and sample every ``dt``."""
    model = system.true_model if isinstance(system, SystemSpec) else system
    ic = np.asarray(ic, dtype=float)
    if ic.shape != (model.dim,):
        raise ValueError(f"ic must have {model.dim} entries")
    if not dt > 0 or duration < 5 * dt:
        raise ValueError("need dt > 0 and duration >= 5*dt")
    times = dt * np.arange(n_timepoints(duration, dt))
    values, status, n_valid = integrate_polynomial(
        model.library.exponent_matrix, model.coef, ic, times, rtol=rtol, atol=atol,
        state_bound=state_bound,
    )
    if status != "ok":
        last_t = float(times[max(n_valid - 1, 0)])
        raise IntegrationDiverged(f"simulation {status} after t={last_t:g}", last_t, n_valid - 1)
    return Trajectory(0.0, dt, values, clean_ref=values)


def _noise_shape(n: int, rng: np.random.Generator, hermitian: bool) -> np.ndarray:
    if hermitian:
        m = n // 2 + 1
        z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        return np.fft.irfft(z, n=n)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return np.fft.ifft(z).real


def add_noise(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Add white noise through the FFT domain, calibrated to ``spec.target_level_pct``.

    Per variable, unit complex Gaussian noise is added to the Fourier
    coefficients and the real part of the inverse transform is kept.  The
    transform is linear, so the noise component is then rescaled once to
    hit the requested level exactly.
    """
    base = traj.values
    clean = traj.clean_ref if traj.clean_ref is not None else traj.values
    if spec.target_level_pct == 0:
        return Trajectory(traj.t0, traj.dt, base.copy(), clean_ref=clean)
    rng = np.random.default_rng(spec.seed)
    noisy = np.array(base, dtype=float)
    for j in range(traj.dim):
        x = base[:, j]
        # real(ifft(fft(x) + z)) == x + real(ifft(z))
        noise = _noise_shape(traj.n, rng, spec.hermitian)
        ref_sd = np.std(clean[:, j])
        scale_sd = ref_sd if ref_sd > 0 else 1.0
        noise *= (spec.target_level_pct / 100.0) * scale_sd / np.std(noise)
        noisy[:, j] = x + noise
    return Trajectory(traj.t0, traj.dt, noisy, clean_ref=clean)


def measure_noise_level(noisy, clean) -> np.ndarray:
    """Per-variable noise level 100 * std(noisy - clean) / std(clean)."""
    a = np.asarray(getattr(noisy, "values", noisy), dtype=float)
    b = np.asarray(getattr(clean, "values", clean), dtype=float)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    sd = np.std(b, axis=0)
    if np.any(sd == 0):
        raise DegenerateReference("clean series has zero standard deviation")
    return 100.0 * np.std(a - b, axis=0) / sd


def make_dataset(system: SystemSpec, noise_pct: float, seed: int = 0, duration: float | None = None,
                 dt: float | None = None, hermitian: bool = False):
    """Simulate the system's training and validation ICs and add noise.

    Returns ``(train, val)`` lists of noisy trajectories carrying clean refs.
    Each trajectory gets its own noise seed derived from ``seed``.
    """
    duration = duration or system.duration
    dt = dt or system.dt
    out = []
    for k, ic in enumerate(list(system.default_ics) + list(system.val_ics)):
        clean = simulate(system, ic, duration, dt)
        out.append(add_noise(clean, NoiseSpec(noise_pct, seed * 1000 + k, hermitian)))
    n_train = len(system.default_ics)
    return out[:n_train], out[n_train:]
