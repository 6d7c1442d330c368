"""Weighted, FFT-augmented ensemble least squares for one variable's coefficients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RankDeficient, SubsetTooSmall

FFT_MODES = ("complex", "real", "magnitude", "power")
EPS_ABS = 1e-12


@dataclass(frozen=True)
class RegressionConfig:
    n_subsets: int = 17
    subset_fraction: float = 0.7
    fft_mode: str = "power"
    fft_block_scale: float = 1.0
    ratio_threshold: float = 30.0
    seed: int = 0
    rank_tol: float = 1e-10

    def __post_init__(self):
        if self.n_subsets < 1:
            raise ValueError("n_subsets must be >= 1")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must be in (0, 1]")
        if self.fft_mode not in FFT_MODES:
            raise ValueError(f"fft_mode must be one of {FFT_MODES}")
        if self.fft_block_scale < 0:
            raise ValueError("fft_block_scale must be >= 0")


@dataclass(frozen=True)
class CoefficientEnsemble:
    draws: np.ndarray  # [n_subsets, n_active]; failed subsets are NaN rows
    median: np.ndarray


def select_subsets(n_timepoints: int, cfg: RegressionConfig, n_active: int = 0, seed=None) -> list[np.ndarray]:
    """``cfg.n_subsets`` sorted index sets drawn without replacement."""
    size = int(round(cfg.subset_fraction * n_timepoints))
    if size < n_active + 2:
        raise SubsetTooSmall(f"subset size {size} < {n_active + 2}")
    if size >= n_timepoints:
        return [np.arange(n_timepoints) for _ in range(cfg.n_subsets)]
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return [np.sort(rng.choice(n_timepoints, size=size, replace=False)) for _ in range(cfg.n_subsets)]


def exclude_extreme_ratio(theta_active, threshold: float = 30.0, scale=None, eps: float = EPS_ABS) -> np.ndarray:
    """Boolean inclusion mask: False where max|f| / min|f| across active columns exceeds ``threshold``.

    ``scale`` optionally divides each column first (the pipeline passes the
    median absolute value of each functional so ratios compare shapes,
    not units).
    """
    theta = np.abs(np.atleast_2d(np.asarray(theta_active, dtype=float)))
    if theta.shape[1] <= 1:
        return np.ones(theta.shape[0], dtype=bool)
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
        theta = theta / np.where(scale > 0, scale, 1.0)
    ratio = theta.max(axis=1) / np.maximum(theta.min(axis=1), eps)
    return ratio <= threshold


def _spectral_rows(series: np.ndarray, mode: str) -> np.ndarray:
    n = series.shape[0]
    if mode == "complex":
        spec = np.fft.rfft(series, axis=0)
        # interior bins stand for a conjugate pair; sqrt(2) makes the block
        # an exact isometry (times sqrt(n)) of the time-domain rows
        w = np.full(spec.shape[0], np.sqrt(2.0))
        w[0] = 1.0
        if n % 2 == 0:
            w[-1] = 1.0
        spec = spec * w[:, None]
        return np.vstack([spec.real, spec.imag[1 : spec.shape[0] - (1 if n % 2 == 0 else 0)]]) / np.sqrt(n)
    spec = np.fft.rfft(series - series.mean(axis=0), axis=0)
    if mode == "real":
        return spec.real
    if mode == "magnitude":
        return np.abs(spec)
    return np.abs(spec) ** 2


def fft_block(theta_w: np.ndarray, target_w: np.ndarray, mode: str, col_norms, target_norm):
    """Transformed feature/target block, each column scaled to its time-domain norm.

    In complex mode the transform is already norm preserving, so no per-column
    scaling is applied and the block stays exactly linear.
    """
    stacked = np.column_stack([theta_w, target_w])
    rows = _spectral_rows(stacked, mode)
    if mode == "complex":
        return rows[:, :-1], rows[:, -1]
    norms = np.linalg.norm(rows, axis=0)
    want = np.append(col_norms, target_norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        fac = np.where(norms > 0, want / norms, 0.0)
    rows = rows * fac
    return rows[:, :-1], rows[:, -1]


def solve_rank_revealing(M: np.ndarray, y: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Least squares via column-equilibrated, column-pivoted QR."""
    n = M.shape[1]
    if n == 0:
        return np.zeros(0)
    d = np.linalg.norm(M, axis=0)
    if np.any(d == 0):
        raise RankDeficient("zero column in regression matrix", rank=int(np.sum(d > 0)), n_cols=n)
    Q, R, perm = scipy.linalg.qr(M / d, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_tol * diag[0]))
    if rank < n:
        raise RankDeficient(f"effective rank {rank} < {n}", rank=rank, n_cols=n)
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    x = np.empty(n)
    x[perm] = z
    return x / d


def fit_coefficients(theta_active, dxdt, weights, mask, cfg: RegressionConfig) -> np.ndarray:
    """Weighted least squares on time-domain rows stacked with an FFT block.

    Excluded timepoints (``mask`` False) are dropped from the time block and
    zeroed in the full-length series that feeds the FFT block.
    """
    theta = np.asarray(theta_active, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    y = np.asarray(dxdt, dtype=float)
    mask = np.ones(len(y), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(np.where(mask, w, 0.0))
    keep = mask & (sw > 0)
    if keep.sum() < theta.shape[1]:
        raise RankDeficient("fewer included timepoints than active terms", rank=int(keep.sum()), n_cols=theta.shape[1])
    theta_w = theta * sw[:, None]
    y_w = y * sw
    A, a = theta_w[keep], y_w[keep]
    if cfg.fft_block_scale > 0:
        B, b = fft_block(theta_w, y_w, cfg.fft_mode, np.linalg.norm(A, axis=0), np.linalg.norm(a))
        M = np.vstack([A, cfg.fft_block_scale * B])
        rhs = np.concatenate([a, cfg.fft_block_scale * b])
    else:
        M, rhs = A, a
    return solve_rank_revealing(M, rhs, cfg.rank_tol)


def ensemble_fit(theta_active, dxdt, weights, cfg: RegressionConfig, subsets=None, include=None,
                 ratio_scale=None) -> CoefficientEnsemble:
    """Fit on every timepoint subset and take the coefficient-wise median.

    ``include`` is a precomputed ratio-exclusion mask; when omitted it is
    computed here from ``theta_active`` (optionally normalised by
    ``ratio_scale``).  Raises RankDeficient when a majority of subsets fail.
    """
    theta = np.asarray(theta_active, dtype=float)
    n, p = theta.shape
    if subsets is None:
        subsets = select_subsets(n, cfg, p)
    if include is None:
        include = exclude_extreme_ratio(theta, cfg.ratio_threshold, ratio_scale)
    draws = np.full((len(subsets), p), np.nan)
    failures = 0
    for k, idx in enumerate(subsets):
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        mask &= include
        try:
            draws[k] = fit_coefficients(theta, dxdt, weights, mask, cfg)
        except RankDeficient:
            failures += 1
    if failures * 2 > len(subsets) or failures == len(subsets):
        raise RankDeficient(f"{failures} of {len(subsets)} subset fits were rank deficient", n_cols=p)
    median = np.nanmedian(draws, axis=0)
    return CoefficientEnsemble(draws=draws, median=median)
