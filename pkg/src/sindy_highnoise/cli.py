"""Command line: simulate, fit, assess, report.

Exit codes: 0 success, 1 usage or input error, 2 pipeline failure.
The output directory is ``--out``, else ``$SINDY_HIGHNOISE_OUT``, else the
config's ``run.output_dir``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import assess, io
from .dynsys import NoiseSpec, add_noise, get_system, make_dataset, simulate
from .errors import ConfigError, MismatchedLibrary, NoTrueOverlap, NoViableModel, SindyError
from .library import SparseModel, variable_names
from .pipeline import (
    RunConfig, RunLog, prepare_trajectory, run_full, select_best_model,
)

OUT_ENV = "SINDY_HIGHNOISE_OUT"
log = logging.getLogger("sindy_highnoise")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or (cfg.output_dir if cfg else "runs/out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        system = get_system(args.system)
    except KeyError as exc:
        raise UsageError(str(exc.args[0]))
    out = _out_dir(args)
    written = []
    if args.ic is not None:
        if len(args.ic) != system.dim:
            raise UsageError(f"--ic needs {system.dim} values for {system.name}")
        clean = simulate(system, args.ic, args.duration or system.duration, args.dt or system.dt)
        noisy = add_noise(clean, NoiseSpec(args.noise, seed=args.seed, hermitian=args.hermitian))
        pairs = [(f"{args.prefix or system.name}", clean, noisy)]
    else:
        train, val = make_dataset(system, args.noise, args.seed, args.duration, args.dt, args.hermitian)
        pairs = [(f"{args.prefix or system.name}_{kind}{k}", t.clean(), t)
                 for kind, group in (("train", train), ("val", val)) for k, t in enumerate(group)]
    for stem, clean, noisy in pairs:
        io.write_trajectory_csv(out / f"{stem}_clean.csv", clean, include_clean=False)
        io.write_trajectory_csv(out / f"{stem}_noisy.csv", noisy, include_clean=True)
        written += [out / f"{stem}_clean.csv", out / f"{stem}_noisy.csv"]
    for p in written:
        print(p)
    return 0


# --- fit ----------------------------------------------------------------------------

def _fit_config(args) -> RunConfig:
    cfg = io.load_config(args.config, require_all=args.strict) if args.config else RunConfig()
    cfg = io.override(cfg, "run", system=args.system, noise_pct=args.noise, seed=args.seed,
                      window_len=args.window, duration=args.duration,
                      train_files=tuple(args.train) if args.train else None,
                      val_files=tuple(args.val) if args.val else None)
    cfg = io.override(cfg, "regression", fft_mode=args.fft_mode)
    if args.train and args.system is None:
        cfg = io.override(cfg, "run", system="")
    return cfg


def write_iteration_models(path, runlogs):
    """Model text dump: one block per iteration of every run."""
    blocks = []
    for rl in runlogs:
        for k, rec in enumerate(rl.records):
            ev = rec.event
            head = f"# pass {rl.pass_index} home {rl.home} iteration {rec.iteration} phase {rec.phase} event {ev.kind}"
            if ev.variable is not None:
                head += f" {variable_names(rl.library.dim)[ev.variable]}:{rl.library.terms[ev.term].name()}"
            blocks.append(head + "\n" + "\n".join(rl.model_at(k).equations(4)))
    Path(path).write_text("\n\n".join(blocks) + "\n")


def _runlogs_from_file(path):
    out = []
    for run in io.read_log(path):
        rl = RunLog(run["home"], io.log_library(run), run["records"], run["aborted"], run["pass"])
        out.append(rl)
    return out


def render_artifacts(runlogs, out: Path, tie_tol: float) -> list:
    """Model dumps, FoM mosaics and selected models, all from run logs alone."""
    from .plots import fom_mosaic

    out.mkdir(parents=True, exist_ok=True)
    write_iteration_models(out / "models_by_iteration.txt", runlogs)
    selected = []
    last_pass = max(rl.pass_index for rl in runlogs)
    for rl in runlogs:
        tag = f"pass{rl.pass_index}_{rl.home}"
        try:
            k = select_best_model(rl, tie_tol=tie_tol)
        except NoViableModel:
            k = None
        if rl.records:
            fom_mosaic(rl.records, rl.home, out / f"foms_{tag}.svg", out / f"foms_{tag}",
                       marks=() if k is None else (k,))
        if rl.pass_index == last_pass:
            selected.append((rl, k))
    lines = []
    for rl, k in selected:
        lines.append(f"# {rl.home}: " + ("no viable model" if k is None else f"iteration {rl.records[k].iteration}"))
        if k is not None:
            lines.append(io.dump_model(rl.model_at(k), 4).rstrip())
    (out / "selected_models.txt").write_text("\n".join(lines) + "\n")
    return selected


def cmd_fit(args) -> int:
    try:
        cfg = _fit_config(args)
    except ConfigError as exc:
        raise UsageError(str(exc))
    if not cfg.train_files and not cfg.system:
        raise UsageError("need --train files or a system")
    out = _out_dir(args, cfg)
    io.save_config(out / "config.yaml", cfg)
    result = run_full(cfg)
    io.write_log(out / "iterations.jsonl", result)
    runlogs = [rl for p in result.passes for rl in p.logs]
    render_artifacts(runlogs, out, cfg.selection_tie_tol)

    names = variable_names(result.library.dim)
    report = []
    for h, model in enumerate(result.final_models):
        report.append(f"== train{h}")
        if model is None:
            report.append("no viable model")
            continue
        report += model.equations(4, names)
        if result.raw_errors[h] is not None:
            report.append("raw errors:     " + "  ".join(
                f"{names[r.variable]}' {assess.render_error_row(r)}" for r in result.raw_errors[h].rows))
        if result.closest[h] is not None:
            tm, table, _ = result.closest[h]
            report.append("closest model:")
            report += ["  " + e for e in tm.equations(4, names)]
            report.append("closest errors: " + "  ".join(
                f"{names[r.variable]}' {assess.render_error_row(r)}" for r in table.rows))
        spans = result.span_reports[h]
        if spans is not None:
            flagged = spans[0].render(result.library, names)
            if flagged:
                report.append("in-span alternatives:")
                report += ["  " + line for line in flagged.splitlines() if "<--" in line]
    text = "\n".join(report) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")

    if not args.no_plots:
        _overlays(result, cfg, out)
    if all(m is None for m in result.final_models):
        print("no viable model for any training trajectory", file=sys.stderr)
        return 2
    aborted = [rl.home for p in result.passes for rl in p.logs if rl.aborted]
    if aborted and all(m is None for m in result.final_models):
        return 2
    return 0


def _overlays(result, cfg, out: Path):
    from .pipeline import load_trajectories
    from .plots import trajectory_overlay

    train, _ = load_trajectories(cfg)
    for h, (model, traj) in enumerate(zip(result.final_models, train)):
        if model is None:
            continue
        prep = prepare_trajectory(traj, result.library, cfg.window_len, cfg.weight_halfwidth, f"train{h}",
                                  cfg.trim_edges)
        pred = _evolve_or_none(model, prep, cfg)
        trajectory_overlay(prep.times, traj.values, prep.smoothed.values, pred, out / f"overlay_train{h}.svg",
                           f"train{h}", out / f"overlay_train{h}.csv")


def _evolve_or_none(model, prep, cfg):
    from .errors import EvolutionFailed
    from .evolve import evolve_model, initial_condition_estimate

    ic = initial_condition_estimate(prep.noisy.values, prep.point_weights, min(cfg.evolve.ic_points, prep.noisy.n))
    try:
        return evolve_model(model, ic, prep.times, cfg.evolve.limits)
    except EvolutionFailed as exc:
        return exc.partial


# --- assess ----------------------------------------------------------------------------

def cmd_assess(args) -> int:
    try:
        model = io.read_model(args.model)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read model: {exc}")
    if args.reference:
        reference = io.read_model(args.reference)
    elif args.system:
        try:
            reference = get_system(args.system).true_model
        except KeyError as exc:
            raise UsageError(str(exc.args[0]))
    else:
        raise UsageError("need --reference or --system")
    try:
        traj = io.read_trajectory_csv(args.data)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read data: {exc}")
    try:
        model = io.align_model(model, reference.library.with_active(np.ones_like(reference.library.active)))
    except MismatchedLibrary as exc:
        print(f"library mismatch: {exc}", file=sys.stderr)
        return 2
    reference = SparseModel(model.library.with_active(np.ones_like(model.library.active)), reference.coef)
    prep = prepare_trajectory(traj, model.library, args.window)
    names = variable_names(model.dim)
    lines = ["raw errors:"]
    raw = assess.coefficient_errors(model, reference)
    lines += ["  " + line for line in raw.render(model.library, names).splitlines()]
    try:
        tm, table, trace = assess.closest_to_true_transform(model, reference, prep.theta, args.r2)
        lines.append("closest model:")
        lines += ["  " + e for e in tm.equations(4, names)]
        lines.append("closest errors:")
        lines += ["  " + line for line in table.render(model.library, names).splitlines()]
    except NoTrueOverlap as exc:
        lines.append(f"closest transform unavailable: {exc}")
    culled = {j: [int(i) for i in np.flatnonzero(~model.nonzero()[j])] for j in range(model.dim)}
    alt = assess.in_span_alternatives(model, culled, prep.theta, args.r2)
    red = assess.leave_one_out_redundancy(model, prep.theta, args.r2)
    lines.append("in-span alternatives (flagged):")
    lines += ["  " + line for line in alt.render(model.library, names).splitlines() if "<--" in line]
    lines.append("leave-one-out redundancy:")
    lines += ["  " + line for line in red.render(model.library, names).splitlines()]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out or os.environ.get(OUT_ENV):
        (_out_dir(args) / "assessment.txt").write_text(text)
    return 0


# --- report -----------------------------------------------------------------------------

def cmd_report(args) -> int:
    path = Path(args.log)
    if not path.exists():
        raise UsageError(f"no such log: {path}")
    tie_tol = RunConfig().selection_tie_tol
    cfg_path = path.with_name("config.yaml")
    if cfg_path.exists():
        tie_tol = io.load_config(cfg_path).selection_tie_tol
    runlogs = _runlogs_from_file(path)
    out = _out_dir(args)
    selected = render_artifacts(runlogs, out, tie_tol)
    for rl, k in selected:
        print(f"{rl.home}: " + ("no viable model" if k is None else f"iteration {rl.records[k].iteration}"))
    return 0


# --- entry point --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sindy-highnoise", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write clean and noisy trajectory CSVs")
    s.add_argument("--system", required=True)
    s.add_argument("--ic", type=_floats, help="comma-separated initial condition; omit for the standard dataset")
    s.add_argument("--duration", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--noise", type=float, default=0.0, help="noise level in percent")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hermitian", action="store_true")
    s.add_argument("--prefix")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the culling pipeline and write all artifacts")
    f.add_argument("--config")
    f.add_argument("--strict", action="store_true", help="require every config key")
    f.add_argument("--system")
    f.add_argument("--train", nargs="+")
    f.add_argument("--val", nargs="+")
    f.add_argument("--noise", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--window", type=int)
    f.add_argument("--duration", type=float)
    f.add_argument("--fft-mode", choices=["complex", "real", "magnitude", "power"])
    f.add_argument("--no-plots", action="store_true")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("assess", help="error tables and span reports for a model file")
    a.add_argument("--model", required=True)
    a.add_argument("--reference")
    a.add_argument("--system")
    a.add_argument("--data", required=True, help="trajectory CSV used for the dependence fits")
    a.add_argument("--window", type=int, default=None)
    a.add_argument("--r2", type=float, default=0.95)
    a.add_argument("--out")
    a.set_defaults(func=cmd_assess)

    r = sub.add_parser("report", help="re-render artifacts from an iteration log")
    r.add_argument("--log", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SindyError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
