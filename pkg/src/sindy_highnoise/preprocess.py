"""Smoothing, derivative estimation and noise-based timepoint weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import WindowTooLong

Z_FLOOR = 0.1


@dataclass(frozen=True)
class SmoothingConfig:
    window_len: int = 25

    def __post_init__(self):
        if self.window_len < 1 or self.window_len % 2 == 0:
            raise ValueError("window_len must be a positive odd integer")

    @classmethod
    def for_dt(cls, dt: float, seconds: float = 0.05) -> "SmoothingConfig":
        n = max(1, int(round(seconds / dt)))
        return cls(n if n % 2 else n + 1)


def hamming_kernel(window_len: int) -> np.ndarray:
    w = np.hamming(window_len)
    return w / w.sum()


def smooth_series(x: np.ndarray, window_len: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window_len > x.shape[0]:
        raise WindowTooLong(f"window_len {window_len} exceeds series length {x.shape[0]}")
    if window_len == 1:
        return x.copy()
    half = window_len // 2
    kernel = hamming_kernel(window_len)
    mode = "reflect" if x.shape[0] > half else "symmetric"
    padded = np.pad(x, (half, half), mode=mode)
    return np.convolve(padded, kernel, mode="valid")


def smooth(traj, cfg: SmoothingConfig):
    """Convolve every variable with a unit-sum Hamming window (reflection padded)."""
    if cfg.window_len > traj.n:
        raise WindowTooLong(f"window_len {cfg.window_len} exceeds {traj.n} timepoints")
    out = np.column_stack([smooth_series(traj.values[:, j], cfg.window_len) for j in range(traj.dim)])
    return traj.with_values(out)


def derivative_series(x: np.ndarray, dt: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 5:
        raise ValueError("need at least 5 points")
    d = np.empty_like(x)
    d[2:-2] = (-x[4:] + 8 * x[3:-1] - 8 * x[1:-3] + x[:-4]) / (12 * dt)
    # one-sided second-order differences at the two edge points on each side
    for i in (0, 1):
        d[i] = (-3 * x[i] + 4 * x[i + 1] - x[i + 2]) / (2 * dt)
    for i in (n - 1, n - 2):
        d[i] = (3 * x[i] - 4 * x[i - 1] + x[i - 2]) / (2 * dt)
    return d


def estimate_derivatives(traj) -> np.ndarray:
    return np.column_stack([derivative_series(traj.values[:, j], traj.dt) for j in range(traj.dim)])


def _window_z(window: np.ndarray, center: int) -> float:
    s = np.arange(window.shape[0], dtype=float)
    s -= s.mean()
    slope = np.dot(s, window) / np.dot(s, s)
    resid = window - window.mean() - slope * s
    # rotating the window so the fitted line lies on the axis scales every
    # residual by cos(atan(slope)); z-scores are unchanged by that factor
    resid = resid * np.cos(np.arctan(slope))
    sd = resid.std()
    if sd <= 1e-12 * max(1.0, np.abs(window).max()):
        return 0.0
    return abs(resid[center] - resid.mean()) / sd


def series_weights(x: np.ndarray, halfwidth: int, z_floor: float = Z_FLOOR) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    width = 2 * halfwidth + 1
    z = np.empty(n)
    if n >= width:
        win = sliding_window_view(x, width)
        s = np.arange(width, dtype=float) - halfwidth
        slope = win @ s / np.dot(s, s)
        resid = win - win.mean(axis=1, keepdims=True) - slope[:, None] * s
        resid *= np.cos(np.arctan(slope))[:, None]
        sd = resid.std(axis=1)
        scale = np.maximum(1.0, np.abs(win).max(axis=1))
        centered = resid[:, halfwidth] - resid.mean(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            zi = np.where(sd > 1e-12 * scale, np.abs(centered) / sd, 0.0)
        z[halfwidth : n - halfwidth] = zi
        edge = list(range(min(halfwidth, n))) + list(range(max(n - halfwidth, halfwidth), n))
    else:
        edge = range(n)
    for t in edge:
        lo, hi = max(0, t - halfwidth), min(n, t + halfwidth + 1)
        z[t] = _window_z(x[lo:hi], t - lo)
    return np.log(1.0 / np.maximum(z, z_floor) + 1.0)


def timepoint_weights(noisy, smoothed=None, halfwidth: int = 12, z_floor: float = Z_FLOOR) -> np.ndarray:
    """Per-variable weights ln(1/max(z, z_floor) + 1), z from locally detrended windows.

    ``smoothed`` is accepted for interface symmetry; the z-scores are taken
    on the noisy series around its local linear fit.  Returns [n, dim].
    """
    if halfwidth < 2:
        raise ValueError("halfwidth must be >= 2")
    values = getattr(noisy, "values", noisy)
    return np.column_stack([series_weights(values[:, j], halfwidth, z_floor) for j in range(values.shape[1])])


def derivative_weights(w: np.ndarray) -> np.ndarray:
    """Mean weight of the stencil points t-2, t-1, t+1, t+2 (truncated at the edges)."""
    w = np.asarray(w, dtype=float)
    squeeze = w.ndim == 1
    w = w[:, None] if squeeze else w
    n = w.shape[0]
    total = np.zeros_like(w)
    count = np.zeros((n, 1))
    for off in (-2, -1, 1, 2):
        lo, hi = max(0, -off), min(n, n - off)
        total[lo:hi] += w[lo + off : hi + off]
        count[lo:hi] += 1
    out = total / count
    return out[:, 0] if squeeze else out


def rolling_std(x: np.ndarray, window_len: int) -> np.ndarray:
    """Centered rolling population std along axis 0, windows truncated at the edges."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = x[:, None] if squeeze else x
    n = x.shape[0]
    half = window_len // 2
    c1 = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    c2 = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x * x, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(0, idx - half)
    hi = np.minimum(n, idx + half + 1)
    cnt = (hi - lo)[:, None]
    mean = (c1[hi] - c1[lo]) / cnt
    var = np.maximum((c2[hi] - c2[lo]) / cnt - mean**2, 0.0)
    out = np.sqrt(var)
    return out[:, 0] if squeeze else out
