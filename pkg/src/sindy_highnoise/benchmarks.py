"""Benchmark run configurations and the summaries used to judge them."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .library import variable_names
from .pipeline import FullResult, RunConfig
from .regress import RegressionConfig

# FFT block kept small: at equal norms the column-wise power transform biases
# coefficients by tens of percent even on clean data.
_REG = RegressionConfig(fft_mode="power", fft_block_scale=0.1)
# complex mode is an exact re-expression of the time-domain fit; used where any
# power-block bias matters more than its smoothing (clean data, small damping terms)
_REG_EXACT = RegressionConfig(fft_mode="complex")

BENCHMARKS = {
    "lorenz_clean": RunConfig(system="lorenz", noise_pct=0.0, window_len=1, regression=_REG_EXACT),
    "lorenz_50": RunConfig(system="lorenz", noise_pct=50.0, window_len=101, regression=_REG),
    "lorenz_100": RunConfig(system="lorenz", noise_pct=100.0, window_len=101, regression=_REG),
    "lorenz_300": RunConfig(system="lorenz", noise_pct=300.0, window_len=201, regression=_REG),
    "linear3d_50": RunConfig(system="linear3d", noise_pct=50.0, window_len=201, regression=_REG),
    "harm_linear_70": RunConfig(system="harm_linear", noise_pct=70.0, window_len=201, max_degree=3,
                                regression=_REG_EXACT),
}


def benchmark_config(name: str, **overrides) -> RunConfig:
    return dataclasses.replace(BENCHMARKS[name], **overrides)


@dataclass
class ModelSummary:
    libraries: list  # per variable: sorted tuple of term names with nonzero coefficient
    raw_errors: list  # per variable: {true term: % error or inf}
    closest_libraries: list | None
    closest_errors: list | None  # per variable: {true term: % error}
    equations: list

    def library_matches(self, var: int, terms) -> bool:
        return set(self.libraries[var]) == set(terms)

    def closest_matches(self, var: int, terms) -> bool:
        return self.closest_libraries is not None and set(self.closest_libraries[var]) == set(terms)


def _libraries(model, names):
    nz = model.nonzero()
    return [tuple(t.name(names) for i, t in enumerate(model.library.terms) if nz[j, i]) for j in range(model.dim)]


def _errors(table, library, names):
    out = []
    for row in table.rows:
        out.append({library.terms[i].name(names): float(e) for i, e in zip(row.true_terms, row.errors)})
    return out


def summarize(result: FullResult) -> list:
    """One ModelSummary per training trajectory (None where no model was selected)."""
    names = variable_names(result.library.dim)
    out = []
    for model, raw, closest in zip(result.final_models, result.raw_errors, result.closest):
        if model is None:
            out.append(None)
            continue
        out.append(ModelSummary(
            libraries=_libraries(model, names),
            raw_errors=_errors(raw, result.library, names) if raw is not None else None,
            closest_libraries=_libraries(closest[0], names) if closest else None,
            closest_errors=_errors(closest[1], result.library, names) if closest else None,
            equations=model.equations(4, names),
        ))
    return out


def true_libraries(result: FullResult) -> list:
    names = variable_names(result.true_model.dim)
    return _libraries(result.true_model, names)


def max_error(errors: dict) -> float:
    return max(errors.values()) if errors else float("inf")


def median_error(summaries, which: str = "closest") -> float:
    vals = []
    for s in summaries:
        if s is None:
            continue
        table = s.closest_errors if which == "closest" else s.raw_errors
        if table:
            for row in table:
                vals.extend(row.values())
    return float(np.median(vals)) if vals else float("inf")
