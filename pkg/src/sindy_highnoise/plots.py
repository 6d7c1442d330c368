"""FoM-vs-iteration mosaics and trajectory overlays (SVG, with a CSV per panel)."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .library import variable_names  # noqa: E402

MOSAIC_FOMS = ("in_envelope_frac", "std_rel_err", "fft_power_corr", "hist_corr", "in_bounds_frac")
_SVG_META = {"Date": None}  # with the fixed salt below, re-rendered files are byte-stable
plt.rcParams["svg.hashsalt"] = "sindy-highnoise"


def _series(records, traj: str, fom: str, var: int):
    out = []
    for r in records:
        f = r.foms.get(traj)
        if f is None or not f.evolution_ok:
            out.append(np.nan)
        else:
            out.append(float(getattr(f, fom)[var]))
    return np.array(out)


def _traj_names(records, home):
    names = sorted({n for r in records for n in r.foms} - {home})
    return [home] + names


def fom_mosaic(records, home: str, path, csv_dir=None, dim: int | None = None, marks=()):
    """Grid of FoM panels: one row per FoM, one column per variable, a line per trajectory.

    The home trajectory is drawn thick; ``marks`` are iteration indices to
    flag with vertical lines (e.g. the selected model).  Returns the list of
    CSV files written.
    """
    if not records:
        raise ValueError("no records to plot")
    dim = dim or records[0].active.shape[0]
    names = variable_names(dim)
    trajs = _traj_names(records, home)
    its = np.array([r.iteration for r in records])
    counts = np.array([int(np.sum(r.active)) for r in records])
    fig, axes = plt.subplots(len(MOSAIC_FOMS) + 1, dim, figsize=(3.2 * dim, 1.8 * (len(MOSAIC_FOMS) + 1)),
                             sharex=True, squeeze=False)
    written = []
    csv_dir = Path(csv_dir) if csv_dir is not None else None
    if csv_dir is not None:
        csv_dir.mkdir(parents=True, exist_ok=True)
    for j in range(dim):
        for row, fom in enumerate(MOSAIC_FOMS):
            ax = axes[row, j]
            table = {"iteration": its}
            for t in trajs:
                y = _series(records, t, fom, j)
                table[t] = y
                ax.plot(its, y, lw=2.0 if t == home else 0.8, label=t)
            for m in marks:
                ax.axvline(records[m].iteration, color="k", ls=":", lw=0.8)
            if j == 0:
                ax.set_ylabel(fom.replace("_", " "), fontsize=7)
            if row == 0:
                ax.set_title(f"{names[j]}'", fontsize=9)
            ax.tick_params(labelsize=6)
            if csv_dir is not None:
                written.append(_write_panel(csv_dir / f"{fom}_{names[j]}.csv", table))
        ax = axes[-1, j]
        per_var = np.array([int(r.active[j].sum()) for r in records])
        ax.step(its, per_var, where="post", label="active terms")
        ax.set_xlabel("iteration", fontsize=7)
        ax.tick_params(labelsize=6)
        if j == 0:
            ax.set_ylabel("active terms", fontsize=7)
        if csv_dir is not None:
            written.append(_write_panel(csv_dir / f"active_terms_{names[j]}.csv",
                                        {"iteration": its, "active": per_var, "total": counts}))
    axes[0, 0].legend(fontsize=5, loc="lower left")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return written


def _write_panel(path: Path, table: dict) -> Path:
    keys = list(table)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in zip(*(table[k] for k in keys)):
            w.writerow(["" if isinstance(v, float) and not np.isfinite(v) else repr(v.item() if hasattr(v, "item") else v)
                        for v in row])
    return path


def trajectory_overlay(times, noisy, smoothed, predicted, path, title: str = "", csv_path=None):
    """Noisy samples, smoothed reference and a model evolution, one panel per variable."""
    noisy = np.asarray(noisy)
    dim = noisy.shape[1]
    names = variable_names(dim)
    fig, axes = plt.subplots(dim, 1, figsize=(7, 1.8 * dim), sharex=True, squeeze=False)
    for j in range(dim):
        ax = axes[j, 0]
        ax.plot(times, noisy[:, j], ".", ms=1, color="0.7", label="noisy")
        ax.plot(times, smoothed[:, j], color="C0", lw=1, label="smoothed")
        if predicted is not None:
            ax.plot(times, predicted[:, j], color="C3", lw=1, label="model")
        ax.set_ylabel(names[j])
    axes[0, 0].legend(fontsize=6, loc="upper right")
    axes[-1, 0].set_xlabel("t")
    if title:
        axes[0, 0].set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    if csv_path is not None:
        table = {"t": np.asarray(times)}
        for j, v in enumerate(names):
            table[f"noisy_{v}"] = noisy[:, j]
            table[f"smoothed_{v}"] = np.asarray(smoothed)[:, j]
            if predicted is not None:
                table[f"model_{v}"] = np.asarray(predicted)[:, j]
        _write_panel(Path(csv_path), table)
