"""Choosing the single (variable, term) pair to deactivate each iteration."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoCandidates


@dataclass
class CullState:
    protections: dict = field(default_factory=dict)  # (var, term) -> iterations left
    last_cull: tuple | None = None  # (var, term, iteration)
    balance_limit: int | None = 3
    r2_threshold: float = 0.95
    protect_span: int = 4
    degradation_fraction: float = 0.5
    max_restores: int = 2  # per (var, term); stops cull/restore cycles
    restore_counts: dict = field(default_factory=dict)
    # restored pairs proved necessary, so dependence alone no longer culls them
    lin_dep_immune: set = field(default_factory=set)

    def is_protected(self, var: int, term: int) -> bool:
        return self.protections.get((var, term), 0) > 0

    def tick(self):
        """Count one iteration off every protection."""
        self.protections = {k: v - 1 for k, v in self.protections.items() if v > 1}

    def protect(self, var: int, term: int):
        self.protections[(var, term)] = self.protect_span
        self.restore_counts[(var, term)] = self.restore_counts.get((var, term), 0) + 1
        self.lin_dep_immune.add((var, term))


@dataclass(frozen=True)
class CullEvent:
    kind: str  # lin_dep | threshold | restore | none
    variable: int | None = None
    term: int | None = None
    r2: float | None = None

    def to_dict(self):
        return {"kind": self.kind, "variable": self.variable, "term": self.term, "r2": self.r2}


def leave_one_out_r2(theta: np.ndarray) -> np.ndarray:
    """R^2 of each column regressed (with intercept) on all the other columns.

    Constant columns get R^2 = 0: the intercept already spans them and they
    are never culled for dependence.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[1]
    r2 = np.zeros(p)
    if p < 2:
        return r2
    centered = theta - theta.mean(axis=0)
    norms = np.linalg.norm(centered, axis=0)
    live = norms > 1e-12 * np.maximum(1.0, np.abs(theta).max(axis=0))
    idx = np.flatnonzero(live)
    if idx.size < 2:
        return r2
    Z = centered[:, idx] / norms[idx]
    C = Z.T @ Z
    try:
        cond = np.linalg.cond(C)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError
        diag = np.diag(np.linalg.inv(C))
        if np.any(diag < 1 - 1e-9):
            raise np.linalg.LinAlgError
        r2[idx] = 1.0 - 1.0 / diag
    except np.linalg.LinAlgError:
        for pos, col in enumerate(idx):
            others = np.delete(Z, pos, axis=1)
            beta, *_ = np.linalg.lstsq(others, Z[:, pos], rcond=None)
            resid = Z[:, pos] - others @ beta
            r2[col] = 1.0 - resid @ resid  # columns have unit centered norm
    return np.clip(r2, 0.0, 1.0)


def lin_dep_cull(theta, active, rescaled, state: CullState, variables=None, rows=None):
    """Cull the least important linearly dependent active functional, if any.

    ``active`` is the [dim, n_terms] mask, ``rescaled`` holds |v*xi| for the
    same layout.  Returns a CullEvent or None.
    """
    theta = np.asarray(theta)
    if rows is not None:
        theta = theta[rows]
    active = np.asarray(active, dtype=bool)
    variables = range(active.shape[0]) if variables is None else variables
    best = None
    for j in variables:
        idx = np.flatnonzero(active[j])
        if idx.size < 2:
            continue
        r2 = leave_one_out_r2(theta[:, idx])
        for pos, i in enumerate(idx):
            if r2[pos] < state.r2_threshold or state.is_protected(j, i) or (j, i) in state.lin_dep_immune:
                continue
            key = (rescaled[j, i], j, i)
            if best is None or key < best[0]:
                best = (key, float(r2[pos]))
    if best is None:
        return None
    (_, j, i), r2 = best
    return CullEvent("lin_dep", int(j), int(i), r2)


def balance_excluded(counts, variables, balance_limit) -> set:
    """Variables whose next cull would open a count gap wider than ``balance_limit``."""
    if balance_limit is None:
        return set()
    out = set()
    for j in variables:
        after = {v: counts[v] for v in variables}
        after[j] -= 1
        if max(after.values()) - after[j] > balance_limit:
            out.add(j)
    return out


def threshold_cull(rescaled, active, state: CullState, variables=None) -> CullEvent:
    """Cull the smallest rescaled coefficient among unprotected, balance-eligible pairs."""
    active = np.asarray(active, dtype=bool)
    variables = list(range(active.shape[0]) if variables is None else variables)
    counts = active.sum(axis=1)
    excluded = balance_excluded(counts, variables, state.balance_limit)
    best = None
    for j in variables:
        if j in excluded:
            continue
        for i in np.flatnonzero(active[j]):
            if state.is_protected(j, i):
                continue
            key = (rescaled[j, i], j, i)
            if best is None or key < best:
                best = key
    if best is None:
        raise NoCandidates("every active functional is protected or balance-excluded")
    return CullEvent("threshold", int(best[1]), int(best[2]))


TRACKED_FOMS = ("in_envelope_frac", "std_rel_err", "hist_corr", "fft_power_corr")


def fom_degraded(prev, curr, fraction: float, variables=None, tracked=TRACKED_FOMS) -> bool:
    """True when a tracked larger-is-better FoM fell below ``(1 - fraction)`` of its
    previous value, or |std relative error| grew by more than ``fraction``,
    for any variable; or when the evolution newly failed."""
    if prev is None or curr is None or not prev.evolution_ok:
        return False
    if not curr.evolution_ok:
        return True
    variables = range(len(curr.in_envelope_frac)) if variables is None else variables
    for j in variables:
        for name in tracked:
            a, b = getattr(prev, name)[j], getattr(curr, name)[j]
            if name == "std_rel_err":
                if abs(b) > abs(a) + fraction:
                    return True
            elif a > 0 and b < (1.0 - fraction) * a:
                return True
    return False


def restore_check(prev_foms, curr_foms, state: CullState, iteration: int, variables=None, tracked=TRACKED_FOMS):
    """Restore event for the last-culled pair when the home FoMs degraded."""
    if state.last_cull is None:
        return None
    var, term, when = state.last_cull
    if when != iteration - 1 or state.restore_counts.get((var, term), 0) >= state.max_restores:
        return None
    if fom_degraded(prev_foms, curr_foms, state.degradation_fraction, variables, tracked):
        return CullEvent("restore", var, term)
    return None
