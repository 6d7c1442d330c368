"""Linear-span reports and the oracle closest-to-true model transform."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MismatchedLibrary, NoTrueOverlap
from .library import SparseModel, variable_names

GRID_POINTS = 41
GOLDEN_TOL = 1e-6


@dataclass(frozen=True)
class SpanEntry:
    variable: int
    term: int
    basis: tuple
    betas: tuple
    intercept: float
    r2: float
    flagged: bool


@dataclass
class SpanReport:
    kind: str  # "alternatives" or "redundancy"
    entries: list = field(default_factory=list)

    def flagged(self):
        return [e for e in self.entries if e.flagged]

    def render(self, library, names=None) -> str:
        names = names or variable_names(library.dim)
        tn = library.term_names(names)
        lines = []
        for e in self.entries:
            fit = " ".join(f"{'-' if b < 0 else '+'} {abs(b):.4g} {tn[i]}" for b, i in zip(e.betas, e.basis))
            fit = fit[2:] if fit.startswith("+ ") else fit or "0"
            mark = "  <-- " + ("alternative" if self.kind == "alternatives" else "redundant") if e.flagged else ""
            lines.append(f"{names[e.variable]}': {tn[e.term]} ~ {fit}  (R^2 = {e.r2:.3f}){mark}")
        return "\n".join(lines)


def r2_fit(target, basis, intercept: bool = True):
    """Least squares of ``target`` on ``basis`` columns; returns (betas, intercept, r2).

    R^2 = 1 - SS_res / SS_tot with SS_tot taken about the mean, clipped to [0, 1].
    """
    y = np.asarray(target, dtype=float)
    X = np.asarray(basis, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = [X, np.ones((X.shape[0], 1))] if intercept else [X]
    A = np.hstack(cols)
    if A.shape[1] == 0:
        beta = np.zeros(0)
        resid = y
    else:
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ beta
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 0.0 if ss_tot == 0 else float(np.clip(1.0 - resid @ resid / ss_tot, 0.0, 1.0))
    b0 = float(beta[-1]) if intercept and beta.size else 0.0
    betas = beta[: X.shape[1]]
    return betas, b0, r2


def in_span_alternatives(model: SparseModel, culled_terms, theta, r2_threshold: float = 0.95, rows=None) -> SpanReport:
    """Fit each culled term on the retained active terms of its variable.

    ``culled_terms`` maps variable -> iterable of term indices (or is a list
    per variable).
    """
    theta = np.asarray(theta) if rows is None else np.asarray(theta)[rows]
    report = SpanReport("alternatives")
    nz = model.nonzero()
    for j in range(model.dim):
        basis = np.flatnonzero(nz[j])
        cands = culled_terms.get(j, []) if isinstance(culled_terms, dict) else culled_terms[j]
        for i in cands:
            if i in basis:
                continue
            betas, b0, r2 = r2_fit(theta[:, i], theta[:, basis])
            report.entries.append(SpanEntry(j, int(i), tuple(int(b) for b in basis), tuple(map(float, betas)),
                                            b0, r2, r2 >= r2_threshold))
    return report


def leave_one_out_redundancy(model: SparseModel, theta, r2_threshold: float = 0.95, rows=None) -> SpanReport:
    theta = np.asarray(theta) if rows is None else np.asarray(theta)[rows]
    report = SpanReport("redundancy")
    nz = model.nonzero()
    for j in range(model.dim):
        basis = np.flatnonzero(nz[j])
        for i in basis:
            others = basis[basis != i]
            betas, b0, r2 = r2_fit(theta[:, i], theta[:, others])
            report.entries.append(SpanEntry(j, int(i), tuple(int(b) for b in others), tuple(map(float, betas)),
                                            b0, r2, r2 >= r2_threshold))
    return report


# --- error tables -----------------------------------------------------------

@dataclass
class ErrorRow:
    variable: int
    true_terms: list  # term indices of the reference model
    errors: list  # percent or math.inf when missing
    extra_terms: list  # (term index, coefficient)

    @property
    def finite_errors(self):
        return [e for e in self.errors if math.isfinite(e)]


@dataclass
class ErrorTable:
    rows: list

    def all_errors(self):
        return [e for r in self.rows for e in r.errors]

    def median_error(self) -> float:
        errs = self.all_errors()
        return float(np.median(errs)) if errs else float("nan")

    def render(self, library, names=None) -> str:
        names = names or variable_names(library.dim)
        return "\n".join(f"{names[r.variable]}': {render_error_row(r)}" for r in self.rows)


def render_error_row(row: ErrorRow) -> str:
    """Paper-table convention: integer percents, ``inf`` if missing, ``*`` per extra term."""
    parts = ["*"] * len(row.extra_terms)
    parts += ["inf" if not math.isfinite(e) else str(int(round(e))) for e in row.errors]
    return "(" + ", ".join(parts) + ")"


def coefficient_errors(assessed: SparseModel, true_model: SparseModel) -> ErrorTable:
    if not assessed.library.same_universe(true_model.library):
        raise MismatchedLibrary("models use different library universes")
    rows = []
    for j in range(true_model.dim):
        truth = true_model.coef[j]
        est = assessed.coef[j]
        true_idx = [int(i) for i in np.flatnonzero(truth)]
        errs = []
        for i in true_idx:
            errs.append(math.inf if est[i] == 0 else 100.0 * abs((est[i] - truth[i]) / truth[i]))
        extra = [(int(i), float(est[i])) for i in np.flatnonzero(est) if truth[i] == 0]
        rows.append(ErrorRow(j, true_idx, errs, extra))
    return ErrorTable(rows)


# --- closest-to-true transform ------------------------------------------------

@dataclass
class Relation:
    """0 ~ -f_k + sum_i beta_i f_i over the term indices in ``terms``."""
    left_out: int
    vector: dict  # term index -> coefficient of the relation
    r2: float


@dataclass
class TransformTrace:
    substitutions: list = field(default_factory=list)  # per variable: (term, betas dict, r2)
    relations: dict = field(default_factory=dict)  # variable -> list[Relation]
    steps: dict = field(default_factory=dict)  # variable -> list of (relation.left_out, lambda)
    max_error_history: dict = field(default_factory=dict)  # variable -> list of max rel errors


def _max_rel_error(coef: np.ndarray, truth: np.ndarray, true_idx) -> float:
    return float(max(abs(coef[i] - truth[i]) / abs(truth[i]) for i in true_idx))


def _line_objective(base, direction, truth, true_idx):
    def g(lam):
        return max(abs(base[i] + lam * direction[i] - truth[i]) / abs(truth[i]) for i in true_idx)

    return g


def _golden(g, a, b, tol=GOLDEN_TOL):
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    gc, gd = g(c), g(d)
    while abs(b - a) > tol * max(1.0, abs(a) + abs(b)):
        if gc <= gd:
            b, d, gd = d, c, gc
            c = b - invphi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + invphi * (b - a)
            gd = g(d)
    return (a + b) / 2


def best_shift(base, direction, truth, true_idx, radius):
    """1-D minimisation of the max relative error along ``direction``.

    Coarse grid on [-radius, radius], then golden-section refinement inside
    the bracket around the best grid point; the grid is widened when the
    best point sits on its edge.
    """
    g = _line_objective(base, direction, truth, true_idx)
    radius = max(radius, 1e-9)
    for _ in range(8):
        grid = np.linspace(-radius, radius, GRID_POINTS)
        vals = [g(x) for x in grid]
        k = int(np.argmin(vals))
        if 0 < k < GRID_POINTS - 1:
            break
        radius *= 4
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, GRID_POINTS - 1)]
    lam = _golden(g, lo, hi)
    if g(grid[k]) < g(lam):
        lam = float(grid[k])
    return lam, g(lam)


def _relations(theta, terms, r2_threshold, exclude_left_out=()):
    """Leave-one-out dependence relations among ``terms`` (no intercept)."""
    rels = []
    for k in terms:
        if k in exclude_left_out:
            continue
        others = [i for i in terms if i != k]
        if not others:
            continue
        betas, _, r2 = r2_fit(theta[:, k], theta[:, others], intercept=False)
        if r2 >= r2_threshold:
            vec = {int(i): float(b) for i, b in zip(others, betas)}
            vec[int(k)] = -1.0
            rels.append(Relation(int(k), vec, r2))
    return rels


def closest_to_true_transform(discovered: SparseModel, true_model: SparseModel, theta, r2_threshold: float = 0.95,
                              rows=None, max_rounds: int = 200):
    """Equivalent re-expression of ``discovered`` closest to ``true_model``.

    Per variable: substitute discovered non-true terms that lie in the span
    of the true terms, then greedily apply leave-one-out dependence relations
    (each scaled by a 1-D optimal lambda) while they strictly reduce the
    largest relative error over the true terms.

    Returns ``(transformed_model, error_table, trace)``.
    """
    if not discovered.library.same_universe(true_model.library):
        raise MismatchedLibrary("models use different library universes")
    lib = discovered.library
    theta = np.asarray(theta) if rows is None else np.asarray(theta)[rows]
    const = [i for i, t in enumerate(lib.terms) if t.is_constant]
    coef = np.array(discovered.coef, dtype=float)
    trace = TransformTrace()
    no_overlap = []
    for j in range(discovered.dim):
        truth = true_model.coef[j]
        true_idx = [int(i) for i in np.flatnonzero(truth)]
        row = coef[j].copy()
        if not true_idx:
            trace.max_error_history[j] = []
            continue
        # substitute out discovered terms lying in the span of the true library
        for g in [int(i) for i in np.flatnonzero(row) if truth[i] == 0 and i not in const]:
            betas, _, r2 = r2_fit(theta[:, g], theta[:, true_idx], intercept=False)
            if r2 >= r2_threshold:
                xi = row[g]
                row[g] = 0.0
                for i, b in zip(true_idx, betas):
                    row[i] += xi * b
                trace.substitutions.append((j, g, dict(zip(true_idx, map(float, betas))), r2))
        terms = sorted(set(np.flatnonzero(row).tolist()) | set(true_idx))
        rels = _relations(theta, terms, r2_threshold, exclude_left_out=const)
        trace.relations[j] = rels
        history = [_max_rel_error(row, truth, true_idx)]
        steps = []
        for _ in range(max_rounds):
            best = None
            for rel in rels:
                direction = np.zeros_like(row)
                for i, c in rel.vector.items():
                    direction[i] = c
                span = max(np.abs(row).max(), np.abs(truth).max())
                lam, val = best_shift(row, direction, truth, true_idx, span)
                if best is None or val < best[0]:
                    best = (val, lam, direction, rel)
            if best is None or not best[0] < history[-1] - 1e-12:
                break
            val, lam, direction, rel = best
            row = row + lam * direction
            history.append(val)
            steps.append((rel.left_out, float(lam)))
        # shifts can leave round-off dust on terms the model never used
        dust = np.abs(row) < 1e-12 * max(1.0, np.abs(row).max())
        row[dust] = 0.0
        coef[j] = row
        trace.max_error_history[j] = history
        trace.steps[j] = steps
        if not any(row[i] != 0 for i in true_idx):
            no_overlap.append(j)
    if no_overlap:
        raise NoTrueOverlap(f"variables {no_overlap} share no terms with the reference model")
    active = lib.active | (coef != 0)
    transformed = SparseModel(lib.with_active(active), coef)
    return transformed, coefficient_errors(transformed, true_model), trace


def transform_deviation(raw: SparseModel, transformed: SparseModel, ic, times, reference, limits=None):
    """Relative RMS (per variable, in units of std(reference)) between evolutions."""
    from .evolve import EvolutionLimits, evolve_model, relative_rms

    limits = limits or EvolutionLimits()
    a = evolve_model(raw, ic, times, limits)
    b = evolve_model(transformed, ic, times, limits)
    ref = np.asarray(getattr(reference, "values", reference))
    return relative_rms(a, b, ref.std(axis=0))
