"""Polynomial functional libraries, sparse coefficient models and rescale factors.

A library is an ordered tuple of monomials (exponent multi-indices) plus a
per-variable boolean mask saying which (variable, term) pairs may carry a
nonzero coefficient.  A :class:`SparseModel` pairs a library with the
coefficient matrix ``coef[variable, term]``.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePercentile, MismatchedLibrary

_VAR_LETTERS = "xyzwvu"


def variable_names(dim: int) -> list[str]:
    if dim <= len(_VAR_LETTERS):
        return list(_VAR_LETTERS[:dim])
    return [f"x{i + 1}" for i in range(dim)]


@dataclass(frozen=True, order=True)
class FunctionalTerm:
    exponents: tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def name(self, names: list[str] | None = None) -> str:
        names = names or variable_names(len(self.exponents))
        parts = []
        for v, e in zip(names, self.exponents):
            if e == 1:
                parts.append(v)
            elif e > 1:
                parts.append(f"{v}^{e}")
        return "*".join(parts) if parts else "1"

    def contains(self, var: int) -> bool:
        return self.exponents[var] > 0


def parse_term(text: str, names: list[str]) -> FunctionalTerm:
    exps = [0] * len(names)
    text = text.strip()
    if text == "1":
        return FunctionalTerm(tuple(exps))
    for factor in text.split("*"):
        base, _, power = factor.partition("^")
        if base not in names:
            raise MismatchedLibrary(f"unknown variable {base!r} in term {text!r}")
        exps[names.index(base)] += int(power) if power else 1
    return FunctionalTerm(tuple(exps))


@dataclass(frozen=True)
class FunctionalLibrary:
    terms: tuple[FunctionalTerm, ...]
    active: np.ndarray  # bool [dim, n_terms]

    def __post_init__(self):
        active = np.array(self.active, dtype=bool)
        if active.ndim != 2 or active.shape[1] != len(self.terms):
            raise ValueError("active mask must be [dim, n_terms]")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("library terms must be unique")
        if any(len(t.exponents) != active.shape[0] for t in self.terms):
            raise ValueError("term arity does not match dim")
        active.setflags(write=False)
        object.__setattr__(self, "active", active)

    @property
    def dim(self) -> int:
        return self.active.shape[0]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def exponent_matrix(self) -> np.ndarray:
        return np.array([t.exponents for t in self.terms], dtype=np.int64).reshape(
            self.n_terms, self.dim
        )

    def term_names(self, names=None) -> list[str]:
        return [t.name(names) for t in self.terms]

    def index(self, term: FunctionalTerm) -> int:
        return self.terms.index(term)

    def with_active(self, active) -> "FunctionalLibrary":
        return FunctionalLibrary(self.terms, np.asarray(active, dtype=bool))

    def same_universe(self, other: "FunctionalLibrary") -> bool:
        return self.terms == other.terms

    def active_counts(self) -> np.ndarray:
        return self.active.sum(axis=1)


@dataclass(frozen=True)
class SparseModel:
    library: FunctionalLibrary
    coef: np.ndarray = field(default=None)  # [dim, n_terms]

    def __post_init__(self):
        lib = self.library
        coef = np.zeros(lib.active.shape) if self.coef is None else np.array(self.coef, dtype=float)
        if coef.shape != lib.active.shape:
            raise ValueError(f"coef shape {coef.shape} != {lib.active.shape}")
        coef = np.where(lib.active, coef, 0.0)
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    @property
    def dim(self) -> int:
        return self.library.dim

    def nonzero(self) -> np.ndarray:
        return self.coef != 0

    def with_coef(self, coef) -> "SparseModel":
        return SparseModel(self.library, coef)

    def rhs(self, state) -> np.ndarray:
        theta = evaluate_terms(self.library.exponent_matrix, np.atleast_2d(state))
        return theta @ self.coef.T

    def equations(self, precision: int | None = None, names=None) -> list[str]:
        names = names or variable_names(self.dim)
        lines = []
        for j in range(self.dim):
            lines.append(f"{names[j]}' = " + format_equation(self.coef[j], self.library, precision, names))
        return lines


def format_number(value: float, precision: int | None) -> str:
    if precision is None:
        return repr(float(value))
    text = f"{value:.{precision}f}".rstrip("0").rstrip(".")
    return text if text not in ("", "-0") else "0"


def format_equation(row, library: FunctionalLibrary, precision=None, names=None) -> str:
    parts = []
    for i, c in enumerate(row):
        if c == 0:
            continue
        term = library.terms[i].name(names)
        mag = format_number(abs(c), precision)
        body = mag if term == "1" else f"{mag} {term}"
        if not parts:
            parts.append(body if c > 0 else f"-{body}")
        else:
            parts.append(("+ " if c > 0 else "- ") + body)
    return " ".join(parts) if parts else "0"


_EQ_TOKEN = re.compile(
    r"\s*([+-])?\s*((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf|nan)(?:\s+([A-Za-z][A-Za-z0-9_^*]*))?"
)


def parse_equation(text: str, library: FunctionalLibrary, names=None) -> np.ndarray:
    names = names or variable_names(library.dim)
    row = np.zeros(library.n_terms)
    text = text.strip()
    if text == "0":
        return row
    pos = 0
    while pos < len(text):
        m = _EQ_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse equation near {text[pos:]!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        term = parse_term(m.group(3) or "1", names)
        if term not in library.terms:
            raise MismatchedLibrary(f"term {term.name(names)} not in library")
        row[library.index(term)] += sign * float(m.group(2))
        pos = m.end()
    return row


def build_polynomial_library(dim: int, max_degree: int, include_constant: bool = True) -> FunctionalLibrary:
    """All monomials in ``dim`` variables up to ``max_degree``, ordered by degree.

    Within a degree the order is lexicographic in the variable indices, e.g.
    ``1, x, y, z, x^2, x*y, x*z, y^2, y*z, z^2``.
    """
    if dim < 1 or max_degree < 1:
        raise ValueError("dim and max_degree must be >= 1")
    terms = []
    for deg in range(0 if include_constant else 1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), deg):
            exps = [0] * dim
            for v in combo:
                exps[v] += 1
            terms.append(FunctionalTerm(tuple(exps)))
    return FunctionalLibrary(tuple(terms), np.ones((dim, len(terms)), dtype=bool))


def library_without_variable(library: FunctionalLibrary, var: int) -> FunctionalLibrary:
    """Deactivate every term touching ``var`` and the whole row of ``var``."""
    active = np.array(library.active)
    for i, term in enumerate(library.terms):
        if term.contains(var):
            active[:, i] = False
    active[var, :] = False
    return library.with_active(active)


def evaluate_terms(exponents: np.ndarray, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    out = np.ones((values.shape[0], exponents.shape[0]))
    for v in range(exponents.shape[1]):
        col = values[:, v]
        for i, e in enumerate(exponents[:, v]):
            if e:
                out[:, i] *= col**e
    return out


def evaluate_library(library: FunctionalLibrary, traj) -> np.ndarray:
    """Theta matrix [n_timepoints, n_terms] on a Trajectory or raw value array."""
    values = getattr(traj, "values", traj)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != library.dim:
        raise ValueError("trajectory dimension does not match library")
    return evaluate_terms(library.exponent_matrix, values)


def nearest_rank_percentile(values, m: float) -> float:
    """Nearest-rank percentile: the ceil(m/100 * n)-th smallest value (1-based)."""
    vals = np.sort(np.asarray(values, dtype=float))
    if vals.size == 0:
        raise ValueError("empty input")
    rank = max(1, math.ceil(m / 100.0 * vals.size))
    return float(vals[min(rank, vals.size) - 1])


@dataclass(frozen=True)
class RescaleFactors:
    v: np.ndarray  # per active term
    M: float
    medians: np.ndarray


def term_medians(theta: np.ndarray, fit_timepoints=None) -> np.ndarray:
    rows = theta if fit_timepoints is None else theta[fit_timepoints]
    return np.median(np.abs(rows), axis=0)


def rescale_factors(theta, active, fit_timepoints=None, percentile_m: float = 50.0) -> RescaleFactors:
    """Rescale factors v_i = med|f_i| / M for the active columns of one variable.

    ``M`` is the nearest-rank ``percentile_m`` of the active medians.  The
    result is ordered like ``np.flatnonzero(active)``.
    """
    active = np.asarray(active, dtype=bool)
    if not active.any():
        raise ValueError("no active terms")
    med = term_medians(np.asarray(theta)[:, active], fit_timepoints)
    M = nearest_rank_percentile(med, percentile_m)
    if M == 0:
        raise DegeneratePercentile("percentile of functional medians is zero")
    return RescaleFactors(v=med / M, M=M, medians=med)


def rescaled_coefficients(model: SparseModel, theta, fit_timepoints=None, percentile_m: float = 50.0) -> np.ndarray:
    """|v * xi| for every (variable, term); inactive entries are NaN."""
    out = np.full(model.coef.shape, np.nan)
    for j in range(model.dim):
        act = model.library.active[j]
        if not act.any():
            continue
        rf = rescale_factors(theta, act, fit_timepoints, percentile_m)
        out[j, act] = np.abs(rf.v * model.coef[j, act])
    return out
