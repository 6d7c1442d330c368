"""Model evolution from estimated initial conditions and trajectory Figures of Merit."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import EvolutionFailed
from .integrate import integrate_polynomial

HIST_BINS = 50
BOUNDS_MARGIN = 0.1
ENVELOPE_SIGMAS = 2.0


@dataclass(frozen=True)
class EvolutionLimits:
    state_bound: float = 1e6
    wall_clock_cap: float = 10.0
    rtol: float = 1e-6
    atol: float = 1e-8

    def __post_init__(self):
        if self.state_bound <= 0 or self.wall_clock_cap <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class FomSuite:
    stability: float
    in_bounds_frac: np.ndarray
    in_envelope_frac: np.ndarray
    std_rel_err: np.ndarray
    fft_power_corr: np.ndarray
    hist_corr: np.ndarray
    evolution_ok: bool = True
    failure: str | None = None

    @classmethod
    def failed(cls, dim: int, reason: str = "failed") -> "FomSuite":
        nan = np.full(dim, np.nan)
        return cls(float("nan"), nan, nan, nan, nan, nan, False, reason)

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.atleast_1d(a)]

        return {
            "evolution_ok": self.evolution_ok,
            "failure": self.failure,
            "stability": None if not np.isfinite(self.stability) else float(self.stability),
            "in_bounds_frac": clean(self.in_bounds_frac),
            "in_envelope_frac": clean(self.in_envelope_frac),
            "std_rel_err": clean(self.std_rel_err),
            "fft_power_corr": clean(self.fft_power_corr),
            "hist_corr": clean(self.hist_corr),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FomSuite":
        def arr(v):
            return np.array([np.nan if x is None else x for x in v], dtype=float)

        stab = d.get("stability")
        return cls(
            float("nan") if stab is None else stab,
            arr(d["in_bounds_frac"]), arr(d["in_envelope_frac"]), arr(d["std_rel_err"]),
            arr(d["fft_power_corr"]), arr(d["hist_corr"]), d["evolution_ok"], d.get("failure"),
        )


def initial_condition_estimate(values, weights, k: int, start: int = 0) -> np.ndarray:
    """Per-variable weighted mean of ``values[start:start+k]``."""
    values = np.asarray(getattr(values, "values", values), dtype=float)
    if k < 1 or start + k > values.shape[0]:
        raise ValueError("need 1 <= k and start + k <= n_timepoints")
    block = values[start : start + k]
    if weights is None:
        return block.mean(axis=0)
    w = np.asarray(weights, dtype=float)
    w = (w[:, None] if w.ndim == 1 else w)[start : start + k]
    w = np.broadcast_to(w, block.shape)
    total = w.sum(axis=0)
    out = block.mean(axis=0)
    ok = total > 0
    out[ok] = (w * block).sum(axis=0)[ok] / total[ok]
    return out


def evolve_model(model, ic, times, limits: EvolutionLimits = EvolutionLimits()) -> np.ndarray:
    """Integrate the model on ``times``; raises EvolutionFailed with partial output."""
    if not np.all(np.isfinite(model.coef)):
        raise ValueError("model coefficients must be finite")
    values, status, n_valid = integrate_polynomial(
        model.library.exponent_matrix, model.coef, ic, times, rtol=limits.rtol, atol=limits.atol,
        state_bound=limits.state_bound, wall_clock_cap=limits.wall_clock_cap,
    )
    if status != "ok":
        raise EvolutionFailed(status, max(n_valid - 1, 0), partial=values)
    return values


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        return 1.0
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def power_spectrum(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.abs(np.fft.rfft(x - x.mean())) ** 2


def histogram_corr(a: np.ndarray, b: np.ndarray, bins: int = HIST_BINS) -> float:
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return 1.0
    ha, _ = np.histogram(a, bins=bins, range=(lo, hi))
    hb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    return _pearson(ha, hb)


def relative_rms(a: np.ndarray, b: np.ndarray, scale: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2, axis=0))
    return rms / np.where(scale > 0, scale, 1.0)


def compute_foms(pred, noisy_ref, smoothed_ref, noise_std_local, repeats=()) -> FomSuite:
    """Six trajectory FoMs of ``pred`` against the reference series.

    ``repeats`` holds further evolutions of the same model (e.g. from shifted
    initial conditions) aligned to the tail of ``pred``; stability is the
    largest pairwise relative RMS deviation among ``pred`` and ``repeats``.
    """
    pred = np.asarray(pred, dtype=float)
    noisy = np.asarray(getattr(noisy_ref, "values", noisy_ref), dtype=float)
    smooth = np.asarray(getattr(smoothed_ref, "values", smoothed_ref), dtype=float)
    nsd = np.asarray(noise_std_local, dtype=float)
    if pred.shape != smooth.shape or noisy.shape != smooth.shape:
        raise ValueError("pred and references must be aligned")
    dim = pred.shape[1]
    ref_sd = smooth.std(axis=0)

    runs = [pred] + [np.asarray(r, dtype=float) for r in repeats]
    stability = 0.0
    if len(runs) > 1:
        tail = min(r.shape[0] for r in runs)
        for a, b in itertools.combinations(runs, 2):
            dev = relative_rms(a[-tail:], b[-tail:], ref_sd).mean()
            stability = max(stability, float(dev))

    lo, hi = noisy.min(axis=0), noisy.max(axis=0)
    margin = BOUNDS_MARGIN * (hi - lo)
    in_bounds = ((pred >= lo - margin) & (pred <= hi + margin)).mean(axis=0)
    in_env = (np.abs(pred - smooth) <= ENVELOPE_SIGMAS * nsd).mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        std_err = np.where(ref_sd > 0, (pred.std(axis=0) - ref_sd) / ref_sd, 0.0)
    fft_corr = np.array([_pearson(power_spectrum(pred[:, j]), power_spectrum(smooth[:, j])) for j in range(dim)])
    hist = np.array([histogram_corr(pred[:, j], smooth[:, j]) for j in range(dim)])
    return FomSuite(stability, in_bounds, in_env, std_err, fft_corr, hist, True)
