"""Iterative regress / evaluate / cull loop, model selection and the two-pass run."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import assess
from .cull import CullEvent, CullState, lin_dep_cull, restore_check, threshold_cull
from .dynsys import Trajectory, get_system, make_dataset
from .errors import EvolutionFailed, NoCandidates, NoTrueOverlap, NoViableModel, RankDeficient
from .evolve import EvolutionLimits, FomSuite, compute_foms, evolve_model, initial_condition_estimate
from .library import (
    FunctionalLibrary, SparseModel, build_polynomial_library, evaluate_library, library_without_variable,
    parse_term,
    rescaled_coefficients, term_medians, variable_names,
)
from .preprocess import (
    SmoothingConfig, derivative_weights, estimate_derivatives, rolling_std, smooth, timepoint_weights,
)
from .regress import RegressionConfig, ensemble_fit, exclude_extreme_ratio, select_subsets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CullConfig:
    balance_limit: int | None = 3
    r2_threshold: float = 0.95
    protect_span: int = 4
    degradation_fraction: float = 0.5
    max_restores: int = 2
    percentile_m: float = 50.0

    def new_state(self) -> CullState:
        return CullState(balance_limit=self.balance_limit, r2_threshold=self.r2_threshold,
                         protect_span=self.protect_span, degradation_fraction=self.degradation_fraction,
                         max_restores=self.max_restores)


@dataclass(frozen=True)
class EvolveConfig:
    limits: EvolutionLimits = EvolutionLimits()
    n_repeats: int = 3
    ic_points: int = 10
    density_threshold: int = 12


@dataclass(frozen=True)
class RunConfig:
    system: str | None = "lorenz"
    train_files: tuple = ()
    val_files: tuple = ()
    noise_pct: float = 0.0
    duration: float | None = None
    dt: float | None = None
    seed: int = 0
    window_len: int | None = None  # None: 50 ms worth of samples
    weight_halfwidth: int = 12
    trim_edges: bool = True
    max_degree: int = 2
    include_constant: bool = True
    regression: RegressionConfig = RegressionConfig()
    cull: CullConfig = CullConfig()
    evolve: EvolveConfig = EvolveConfig()
    restart_enabled: bool = False
    use_train_as_validation: bool = True
    second_pass: bool = True
    reinstate: tuple = ()  # (variable name, term name) pairs re-enabled before pass 2
    max_iterations: int = 1000
    assess_r2_threshold: float = 0.95
    selection_tie_tol: float = 0.1  # relative to the best score
    output_dir: str = "runs/out"


@dataclass
class PreparedTrajectory:
    name: str
    noisy: Trajectory
    smoothed: Trajectory
    dxdt: np.ndarray
    point_weights: np.ndarray
    deriv_weights: np.ndarray
    theta: np.ndarray
    medians: np.ndarray
    noise_std: np.ndarray
    window_len: int

    @property
    def times(self):
        return self.noisy.dt * np.arange(self.noisy.n)


ENVELOPE_FLOOR = 0.01  # noise envelope never narrower than this fraction of the series std


def prepare_trajectory(traj: Trajectory, library: FunctionalLibrary, window_len: int | None,
                       halfwidth: int = 12, name: str = "traj", trim_edges: bool = True) -> PreparedTrajectory:
    """Smooth, differentiate, weight and evaluate the library on one trajectory.

    With ``trim_edges`` the derivative weights are zeroed within half a
    smoothing window (plus the stencil reach) of either end, where the
    reflection padding distorts the smoothed series.
    """
    cfg = SmoothingConfig(window_len) if window_len else SmoothingConfig.for_dt(traj.dt)
    sm = smooth(traj, cfg) if cfg.window_len > 1 else traj
    pw = timepoint_weights(traj, sm, halfwidth)
    dw = derivative_weights(pw)
    if trim_edges and cfg.window_len > 1:
        cut = min(cfg.window_len // 2 + 2, traj.n // 4)
        dw[:cut] = 0.0
        dw[-cut:] = 0.0
    theta = evaluate_library(library, sm)
    nsd = rolling_std(traj.values - sm.values, cfg.window_len)
    nsd = np.maximum(nsd, ENVELOPE_FLOOR * sm.values.std(axis=0))
    return PreparedTrajectory(
        name=name, noisy=traj, smoothed=sm, dxdt=estimate_derivatives(sm), point_weights=pw,
        deriv_weights=dw, theta=theta, medians=term_medians(theta), noise_std=nsd, window_len=cfg.window_len,
    )


@dataclass
class IterationRecord:
    iteration: int
    phase: int
    coef: np.ndarray
    active: np.ndarray
    event: CullEvent
    foms: dict  # trajectory name -> FomSuite
    counts: list
    skipped_evolution: bool
    removed: tuple = ()
    note: str | None = None

    def to_dict(self, pass_index: int, home: str) -> dict:
        return {
            "pass": pass_index,
            "home": home,
            "phase": self.phase,
            "iteration": self.iteration,
            "counts": [int(c) for c in self.counts],
            "removed": list(self.removed),
            "event": self.event.to_dict(),
            "skipped_evolution": self.skipped_evolution,
            "note": self.note,
            "active": self.active.astype(int).tolist(),
            "coef": [[float(c) for c in row] for row in self.coef],
            "foms": {k: v.to_dict() for k, v in self.foms.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        ev = d["event"]
        return cls(
            iteration=d["iteration"], phase=d["phase"], coef=np.array(d["coef"], dtype=float),
            active=np.array(d["active"], dtype=bool),
            event=CullEvent(ev["kind"], ev["variable"], ev["term"], ev["r2"]),
            foms={k: FomSuite.from_dict(v) for k, v in d["foms"].items()},
            counts=d["counts"], skipped_evolution=d["skipped_evolution"], removed=tuple(d["removed"]),
            note=d.get("note"),
        )


@dataclass
class RunLog:
    home: str
    library: FunctionalLibrary
    records: list = field(default_factory=list)
    aborted: str | None = None
    pass_index: int = 1
    subsets_seed: list = field(default_factory=list)

    def model_at(self, k: int) -> SparseModel:
        rec = self.records[k]
        return SparseModel(self.library.with_active(rec.active), rec.coef)


def _variables(dim, removed):
    return [j for j in range(dim) if j not in removed]


def evaluate_on(model: SparseModel, prep: PreparedTrajectory, ecfg: EvolveConfig, n_repeats: int | None = None):
    n_repeats = ecfg.n_repeats if n_repeats is None else n_repeats
    times = prep.times
    k = min(ecfg.ic_points, prep.noisy.n)
    runs = []
    try:
        for r in range(max(1, n_repeats)):
            off = 2 * r
            ic = initial_condition_estimate(prep.noisy.values, prep.point_weights, k, start=off)
            runs.append(evolve_model(model, ic, times[off:] - times[off], ecfg.limits))
    except EvolutionFailed as exc:
        return FomSuite.failed(model.dim, exc.reason)
    return compute_foms(runs[0], prep.noisy, prep.smoothed, prep.noise_std, repeats=runs[1:])


def fom_score(foms: dict, home: str, variables, val_weight: float = 2.0) -> float:
    """Weighted mean of in_envelope + hist_corr + fft_corr - |std_rel_err|."""
    total = 0.0
    weight = 0.0
    for name, f in foms.items():
        if not f.evolution_ok:
            return float("-inf")
        v = list(variables)
        s = np.mean(f.in_envelope_frac[v] + f.hist_corr[v] + f.fft_power_corr[v] - np.abs(f.std_rel_err[v]))
        w = 1.0 if name == home else val_weight
        total += w * s
        weight += w
    return total / weight if weight else float("-inf")


def _subset_rng_seed(seed, pass_index, home_index, phase, iteration):
    return [int(seed), int(pass_index), int(home_index), int(phase), int(iteration)]


def _fallback_coefficients(theta, y, w):
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(theta * sw[:, None], y * sw, rcond=None)
    return beta


def run_single(home_index: int, preps: list, library: FunctionalLibrary, cfg: RunConfig,
               pass_index: int = 1, val_names=None) -> RunLog:
    """Cull iterations for one home trajectory; the others act as validation."""
    home = preps[home_index]
    others = [p for i, p in enumerate(preps) if i != home_index and (val_names is None or p.name in val_names)]
    dim = library.dim
    start_active = np.array(library.active)
    active = start_active.copy()
    # variables already emptied by an earlier pass's restart stay removed
    removed: list = [j for j in range(dim) if not start_active[j].any()]
    state = cfg.cull.new_state()
    runlog = RunLog(home.name, library.with_active(np.ones_like(start_active)), pass_index=pass_index)
    n = home.noisy.n
    prev_home = None
    phase = 0
    it = 0
    while it < cfg.max_iterations:
        variables = _variables(dim, removed)
        counts = active.sum(axis=1)
        seed = _subset_rng_seed(cfg.seed, pass_index, home_index, phase, it)
        subsets = select_subsets(n, cfg.regression, int(counts.max()), seed=seed)
        coef = np.zeros(active.shape)
        deficient = []
        for j in variables:
            idx = np.flatnonzero(active[j])
            th = home.theta[:, idx]
            include = exclude_extreme_ratio(th, cfg.regression.ratio_threshold, home.medians[idx])
            if include.mean() < 0.1:
                include = np.ones(n, dtype=bool)
            try:
                ens = ensemble_fit(th, home.dxdt[:, j], home.deriv_weights[:, j], cfg.regression, subsets, include)
                coef[j, idx] = ens.median
            except RankDeficient:
                deficient.append(j)
                coef[j, idx] = _fallback_coefficients(th, home.dxdt[:, j], home.deriv_weights[:, j])
        model = SparseModel(runlog.library.with_active(active), coef)

        dense = bool(np.any(counts[variables] > cfg.evolve.density_threshold))
        foms = {}
        if not dense and not deficient:
            foms[home.name] = evaluate_on(model, home, cfg.evolve)
            for p in others:
                foms[p.name] = evaluate_on(model, p, cfg.evolve, n_repeats=1)
        home_foms = foms.get(home.name)

        event = None
        if home_foms is not None:
            event = restore_check(prev_home, home_foms, state, it, variables)
        if event is None:
            rescaled = rescaled_coefficients(model, home.theta, None, cfg.cull.percentile_m)
            rescaled = np.where(np.isnan(rescaled), np.inf, rescaled)
            event = lin_dep_cull(home.theta, active, rescaled, state, variables)
            if event is None:
                if deficient:
                    runlog.records.append(IterationRecord(it, phase, coef, active.copy(), CullEvent("none"), foms,
                                                          counts.tolist(), not foms, tuple(removed),
                                                          "rank deficient"))
                    runlog.aborted = f"rank-deficient regression for variables {deficient}"
                    log.warning("%s: %s", home.name, runlog.aborted)
                    break
                try:
                    event = threshold_cull(rescaled, active, state, variables)
                except NoCandidates:
                    event = CullEvent("none")
        runlog.records.append(IterationRecord(it, phase, coef, active.copy(), event, foms, counts.tolist(),
                                              not foms, tuple(removed)))
        state.tick()
        if event.kind in ("lin_dep", "threshold"):
            active[event.variable, event.term] = False
            state.last_cull = (event.variable, event.term, it)
        elif event.kind == "restore":
            active[event.variable, event.term] = True
            state.protect(event.variable, event.term)
        prev_home = home_foms
        it += 1

        emptied = [j for j in variables if not active[j].any()]
        if emptied:
            if cfg.restart_enabled and len(variables) - len(emptied) >= 1:
                removed.extend(emptied)
                lib = library.with_active(start_active)
                for r in removed:
                    lib = library_without_variable(lib, r)
                active = np.array(lib.active)
                if not any(active[j].any() for j in _variables(dim, removed)):
                    break
                state = cfg.cull.new_state()
                prev_home = None
                phase += 1
                log.info("%s: restart without variables %s", home.name, removed)
                continue
            break
    return runlog


def select_best_model(runlog: RunLog, variables=None, tie_tol: float = 0.0, val_weight: float = 2.0) -> int:
    """Index of the record with the best FoM score, preferring sparser models on ties.

    Only records that evolved successfully on every trajectory are eligible.
    After restarts the phase holding the single best score is chosen first;
    within it, scores within ``tie_tol * |best|`` of the best count as ties
    and the sparsest of those wins.
    """
    if not runlog.records:
        raise NoViableModel("empty log")
    scored = []
    for k, rec in enumerate(runlog.records):
        if not rec.foms:
            continue
        vars_ = variables if variables is not None else _variables(rec.active.shape[0], rec.removed)
        s = fom_score(rec.foms, runlog.home, vars_, val_weight)
        if np.isfinite(s):
            scored.append((s, int(rec.active.sum()), k, rec.phase))
    if not scored:
        raise NoViableModel("no iteration evolved successfully on all trajectories")
    top, _, _, phase = max(scored, key=lambda t: (t[0], -t[1], -t[2]))
    near = [(count, k) for s, count, k, ph in scored if ph == phase and s >= top - tie_tol * abs(top)]
    return min(near)[1]


def union_of_libraries(models: list) -> FunctionalLibrary:
    """Per-variable union of the nonzero patterns of ``models``."""
    base = models[0].library
    active = np.zeros(base.active.shape, dtype=bool)
    for m in models:
        if not m.library.same_universe(base):
            raise ValueError("models must share a library universe")
        active |= m.nonzero()
    return base.with_active(active)


def restart_library(library: FunctionalLibrary, removed_var: int) -> FunctionalLibrary:
    return library_without_variable(library.with_active(np.ones_like(library.active)), removed_var)


def restart_on_remaining(runlog: RunLog, library: FunctionalLibrary, cfg: RunConfig):
    """Library for restarting after a variable emptied, or None when nothing emptied.

    Returns ``(library, removed_variables)``; the library is empty when every
    variable has emptied.
    """
    if not runlog.records:
        return None
    last = runlog.records[-1]
    active = np.array(last.active)
    if last.event.kind in ("lin_dep", "threshold"):
        active[last.event.variable, last.event.term] = False
    emptied = [j for j in range(active.shape[0]) if not active[j].any()]
    if not emptied:
        return None
    lib = library
    for j in emptied:
        lib = library_without_variable(lib, j)
    return lib, emptied


# --- datasets -----------------------------------------------------------------

def load_trajectories(cfg: RunConfig):
    """(train, val) noisy trajectories from the config's system or files."""
    from .io import read_trajectory_csv

    if cfg.train_files:
        train = [read_trajectory_csv(p) for p in cfg.train_files]
        val = [read_trajectory_csv(p) for p in cfg.val_files]
        return train, val
    system = get_system(cfg.system)
    return make_dataset(system, cfg.noise_pct, cfg.seed, cfg.duration, cfg.dt)


@dataclass
class PassResult:
    logs: list
    best_index: list
    best_models: list


@dataclass
class FullResult:
    config: RunConfig
    library: FunctionalLibrary
    passes: list
    final_models: list
    span_reports: list = field(default_factory=list)
    raw_errors: list = field(default_factory=list)
    closest: list = field(default_factory=list)  # (model, table, trace) or None
    true_model: SparseModel | None = None


def run_fit(cfg: RunConfig, train_preps: list, val_preps: list, library: FunctionalLibrary, pass_index=1):
    """One pass: a cull run per training trajectory, then best-model selection."""
    preps = list(train_preps) + list(val_preps)
    names = [p.name for p in preps]
    logs, best, models = [], [], []
    for h in range(len(train_preps)):
        val_names = set(names) - {names[h]}
        if not cfg.use_train_as_validation:
            val_names = {p.name for p in val_preps}
        rl = run_single(h, preps, library, cfg, pass_index, val_names)
        logs.append(rl)
        try:
            k = select_best_model(rl, tie_tol=cfg.selection_tie_tol)
            best.append(k)
            models.append(rl.model_at(k))
        except NoViableModel as exc:
            log.warning("%s: %s", rl.home, exc)
            best.append(None)
            models.append(None)
    return PassResult(logs, best, models)


def _reinstate(library: FunctionalLibrary, pairs) -> FunctionalLibrary:
    names = variable_names(library.dim)
    active = np.array(library.active)
    for var, term in pairs:
        active[names.index(var), library.index(parse_term(term, names))] = True
    return library.with_active(active)


def run_full(cfg: RunConfig, train=None, val=None, true_model: SparseModel | None = None) -> FullResult:
    """Two passes (full library, then union of best libraries) plus assessment."""
    if train is None:
        train, val = load_trajectories(cfg)
        if true_model is None and cfg.system and not cfg.train_files:
            true_model = get_system(cfg.system).true_model
    val = val or []
    dim = train[0].dim
    library = build_polynomial_library(dim, cfg.max_degree, cfg.include_constant)
    tp = [prepare_trajectory(t, library, cfg.window_len, cfg.weight_halfwidth, f"train{i}", cfg.trim_edges) for i, t in enumerate(train)]
    vp = [prepare_trajectory(t, library, cfg.window_len, cfg.weight_halfwidth, f"val{i}", cfg.trim_edges) for i, t in enumerate(val)]
    passes = [run_fit(cfg, tp, vp, library, 1)]
    final = passes[0].best_models
    if cfg.second_pass and any(m is not None for m in final):
        union = union_of_libraries([m for m in final if m is not None])
        union = _reinstate(union, cfg.reinstate)
        passes.append(run_fit(cfg, tp, vp, union, 2))
        final = passes[1].best_models
    result = FullResult(cfg, library, passes, final, true_model=true_model)
    for h, model in enumerate(final):
        if model is None:
            result.span_reports.append(None)
            result.raw_errors.append(None)
            result.closest.append(None)
            continue
        prep = tp[h]
        culled = {j: [int(i) for i in np.flatnonzero(~model.nonzero()[j])] for j in range(dim)}
        rows = _final_rows(passes[-1], h, cfg, prep.noisy.n)
        result.span_reports.append((
            assess.in_span_alternatives(model, culled, prep.theta, cfg.assess_r2_threshold, rows),
            assess.leave_one_out_redundancy(model, prep.theta, cfg.assess_r2_threshold, rows),
        ))
        if true_model is not None:
            true_coef = _embed(true_model, model.library)
            true_m = SparseModel(model.library.with_active((true_coef != 0) | model.library.active), true_coef)
            result.raw_errors.append(assess.coefficient_errors(model, true_m))
            try:
                result.closest.append(assess.closest_to_true_transform(model, true_m, prep.theta,
                                                                       cfg.assess_r2_threshold, rows))
            except NoTrueOverlap as exc:
                log.warning("train%d: %s", h, exc)
                result.closest.append(None)
        else:
            result.raw_errors.append(None)
            result.closest.append(None)
    return result


def _embed(true_model: SparseModel, library: FunctionalLibrary) -> np.ndarray:
    """True coefficients laid out on ``library``'s term order."""
    out = np.zeros((library.dim, library.n_terms))
    for i, term in enumerate(true_model.library.terms):
        if term in library.terms:
            out[:, library.index(term)] = true_model.coef[:, i]
        elif np.any(true_model.coef[:, i]):
            raise ValueError(f"true term {term.name()} missing from the fitting library")
    return out


def _final_rows(pass_result: PassResult, h: int, cfg: RunConfig, n: int) -> np.ndarray:
    """Union of the ensemble subsets used at the selected iteration."""
    k = pass_result.best_index[h]
    rec = pass_result.logs[h].records[k]
    seed = _subset_rng_seed(cfg.seed, pass_result.logs[h].pass_index, h, rec.phase, rec.iteration)
    subsets = select_subsets(n, cfg.regression, int(np.max(rec.counts)), seed=seed)
    mask = np.zeros(n, dtype=bool)
    for s in subsets:
        mask[s] = True
    return np.flatnonzero(mask)
