"""Trajectory CSVs, YAML run configs, model text dumps and JSONL iteration logs."""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import yaml

from .dynsys import Trajectory
from .errors import ConfigError, MismatchedLibrary
from .evolve import EvolutionLimits
from .library import FunctionalLibrary, SparseModel, parse_equation, parse_term, variable_names
from .pipeline import CullConfig, EvolveConfig, IterationRecord, RunConfig
from .regress import RegressionConfig


# --- trajectories --------------------------------------------------------------

def write_trajectory_csv(path, traj: Trajectory, include_clean: bool = True):
    names = variable_names(traj.dim)
    cols = [traj.times[:, None], traj.values]
    header = ["t"] + names
    if include_clean and traj.clean_ref is not None:
        cols.append(traj.clean_ref)
        header += [f"clean_{v}" for v in names]
    np.savetxt(path, np.hstack(cols), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_trajectory_csv(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    value_cols = [i for i, h in enumerate(header[1:], 1) if not h.startswith("clean_")]
    clean_cols = [i for i, h in enumerate(header) if h.startswith("clean_")]
    t = data[:, 0]
    dt = float(np.mean(np.diff(t)))
    clean = data[:, clean_cols] if clean_cols else None
    return Trajectory(float(t[0]), dt, data[:, value_cols], clean)


# --- config ----------------------------------------------------------------------

_SECTIONS = {
    "run": RunConfig,
    "regression": RegressionConfig,
    "cull": CullConfig,
    "evolve": EvolveConfig,
    "limits": EvolutionLimits,
}
_TUPLES = {"train_files", "val_files", "reinstate"}


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def config_to_dict(cfg: RunConfig) -> dict:
    run = {k: v for k, v in dataclasses.asdict(cfg).items() if k not in ("regression", "cull", "evolve")}
    run = {k: (list(map(list, v)) if k == "reinstate" else list(v)) if k in _TUPLES else v for k, v in run.items()}
    evolve = dataclasses.asdict(cfg.evolve)
    limits = evolve.pop("limits")
    return {
        "run": run,
        "regression": dataclasses.asdict(cfg.regression),
        "cull": dataclasses.asdict(cfg.cull),
        "evolve": evolve,
        "limits": limits,
    }


def config_from_dict(d: dict, require_all: bool = False) -> RunConfig:
    """Build a RunConfig from per-section mappings.

    Unknown sections or keys raise ConfigError; with ``require_all`` every
    documented key must be present and a missing one is named in the error.
    """
    d = d or {}
    for section, body in d.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section '{section}'")
        if not isinstance(body, dict):
            raise ConfigError(f"section '{section}' must be a mapping")
        unknown = set(body) - _fields(_SECTIONS[section])
        if section == "run":
            unknown -= {"regression", "cull", "evolve"}
        if section == "evolve":
            unknown -= {"limits"}
        if unknown:
            raise ConfigError(f"unknown key '{section}.{sorted(unknown)[0]}'")
    if require_all:
        for section, cls in _SECTIONS.items():
            want = _fields(cls) - {"regression", "cull", "evolve", "limits"}
            have = set(d.get(section, {}))
            missing = sorted(want - have)
            if missing:
                raise ConfigError(f"missing config key '{section}.{missing[0]}'")
    try:
        limits = EvolutionLimits(**d.get("limits", {}))
        evolve = EvolveConfig(limits=limits, **d.get("evolve", {}))
        regression = RegressionConfig(**d.get("regression", {}))
        cull = CullConfig(**d.get("cull", {}))
        run = dict(d.get("run", {}))
        for k in _TUPLES & set(run):
            run[k] = tuple(tuple(x) if k == "reinstate" else x for x in (run[k] or ()))
        cfg = RunConfig(regression=regression, cull=cull, evolve=evolve, **run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.train_files and not cfg.system:
        raise ConfigError("config needs run.system or run.train_files")
    return cfg


def load_config(path, require_all: bool = False) -> RunConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh), require_all)


def save_config(path, cfg: RunConfig):
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section == "run":
        return dataclasses.replace(cfg, **values)
    if section == "limits":
        return dataclasses.replace(cfg, evolve=dataclasses.replace(cfg.evolve, limits=dataclasses.replace(cfg.evolve.limits, **values)))
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **values)})


# --- models ------------------------------------------------------------------------

def dump_model(model: SparseModel, precision: int | None = None, names=None) -> str:
    """Text block: variable and library headers, then one equation per variable."""
    names = names or variable_names(model.dim)
    lines = ["# vars " + " ".join(names), "# library " + " ".join(model.library.term_names(names))]
    lines += model.equations(precision, names)
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> SparseModel:
    names = None
    term_names = None
    eqs = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("# vars"):
            names = line.split()[2:]
        elif line.startswith("# library"):
            term_names = line.split()[2:]
        elif not line.startswith("#"):
            eqs.append(line.split("=", 1)[1] if "=" in line else line)
    if names is None or term_names is None:
        raise ValueError("model text needs '# vars' and '# library' headers")
    terms = tuple(parse_term(t, names) for t in term_names)
    lib = FunctionalLibrary(terms, np.ones((len(names), len(terms)), dtype=bool))
    if len(eqs) != len(names):
        raise ValueError(f"expected {len(names)} equations, found {len(eqs)}")
    coef = np.vstack([parse_equation(e, lib, names) for e in eqs])
    return SparseModel(lib.with_active(coef != 0), coef)


def read_model(path) -> SparseModel:
    return parse_model(Path(path).read_text())


def write_model(path, model: SparseModel, precision: int | None = None):
    Path(path).write_text(dump_model(model, precision))


def align_model(model: SparseModel, library: FunctionalLibrary) -> SparseModel:
    """Re-express ``model`` on ``library``'s term order; raises MismatchedLibrary."""
    coef = np.zeros((library.dim, library.n_terms))
    if model.dim != library.dim:
        raise MismatchedLibrary("dimension mismatch")
    for i, term in enumerate(model.library.terms):
        if term not in library.terms:
            if np.any(model.coef[:, i]):
                raise MismatchedLibrary(f"term {term.name()} not in library")
            continue
        coef[:, library.index(term)] = model.coef[:, i]
    return SparseModel(library.with_active(coef != 0), coef)


# --- iteration log -------------------------------------------------------------------

def log_lines(result) -> list[str]:
    """One JSON line per iteration of every pass and home trajectory."""
    out = []
    for p in result.passes:
        for rl in p.logs:
            head = {"kind": "run", "pass": rl.pass_index, "home": rl.home, "aborted": rl.aborted,
                    "terms": rl.library.term_names(), "dim": rl.library.dim}
            out.append(json.dumps(head, sort_keys=True))
            for rec in rl.records:
                out.append(json.dumps({"kind": "iteration", **rec.to_dict(rl.pass_index, rl.home)}, sort_keys=True))
    return out


def write_log(path, result):
    Path(path).write_text("\n".join(log_lines(result)) + "\n")


def read_log(path) -> list[dict]:
    """Run headers, each with its parsed IterationRecords under 'records'."""
    runs = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if d["kind"] == "run":
            d["records"] = []
            runs.append(d)
        else:
            runs[-1]["records"].append(IterationRecord.from_dict(d))
    return runs


def log_library(run: dict) -> FunctionalLibrary:
    names = variable_names(run["dim"])
    terms = tuple(parse_term(t, names) for t in run["terms"])
    return FunctionalLibrary(terms, np.ones((run["dim"], len(terms)), dtype=bool))
