"""Adaptive Dormand-Prince 5(4) integration of polynomial vector fields.

Every model handled by the package has the form ``dx/dt = coef @ theta(x)``
with ``theta`` a vector of monomials, so one compiled kernel serves both
ground-truth simulation and candidate-model evolution.  The kernel lands
exactly on each output time (steps are clipped at grid points), so no dense
output interpolation is involved.
"""
from __future__ import annotations

import time

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_STIFF = 2
STATUS_TIMEOUT = 3

_STATUS_NAMES = {STATUS_DIVERGED: "diverged", STATUS_STIFF: "stiff", STATUS_TIMEOUT: "timeout"}

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 6))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


@njit(cache=True)
def _rhs(x, exps, coef, out):
    n_terms = exps.shape[0]
    dim = x.shape[0]
    for j in range(dim):
        out[j] = 0.0
    for i in range(n_terms):
        f = 1.0
        for v in range(dim):
            e = exps[i, v]
            for _ in range(e):
                f *= x[v]
        for j in range(dim):
            c = coef[j, i]
            if c != 0.0:
                out[j] += c * f


@njit(cache=True)
def _integrate(x0, t_out, exps, coef, rtol, atol, bound, h0, max_steps, A, B, C, E, out):
    """Fill ``out[k]`` with the state at ``t_out[k]``.

    Returns (status, n_filled, last_h).  ``out[0]`` must already hold x0.
    """
    dim = x0.shape[0]
    k = np.empty((7, dim))
    y = x0.copy()
    ytmp = np.empty(dim)
    ynew = np.empty(dim)
    h = h0
    n = t_out.shape[0]
    steps = 0
    _rhs(y, exps, coef, k[0])
    for idx in range(1, n):
        t = t_out[idx - 1]
        t_end = t_out[idx]
        while t < t_end:
            if steps >= max_steps:
                return 2, idx, h
            last = False
            if t + h >= t_end:
                h_use = t_end - t
                last = True
            else:
                h_use = h
            for s in range(1, 7):
                for d in range(dim):
                    acc = y[d]
                    for r in range(s):
                        acc += h_use * A[s, r] * k[r, d]
                    ytmp[d] = acc
                _rhs(ytmp, exps, coef, k[s])
            err = 0.0
            finite = True
            for d in range(dim):
                ynew[d] = ytmp[d]
                e = 0.0
                for r in range(7):
                    e += E[r] * k[r, d]
                e *= h_use
                sc = atol + rtol * max(abs(y[d]), abs(ynew[d]))
                err += (e / sc) ** 2
                if not np.isfinite(ynew[d]):
                    finite = False
            err = np.sqrt(err / dim)
            steps += 1
            if not finite or not np.isfinite(err):
                h = h_use * 0.2
                if h < 1e-14 * max(1.0, abs(t)):
                    return 1, idx, h
                # state left the finite range; stage k[0] is still valid
                continue
            if err <= 1.0:
                t = t_end if last else t + h_use
                for d in range(dim):
                    y[d] = ynew[d]
                    k[0, d] = k[6, d]
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                if not last or fac < 1.0:
                    h = h_use * fac
            else:
                h = h_use * max(0.2, 0.9 * err ** -0.2)
                if h < 1e-14 * max(1.0, abs(t)):
                    return 2, idx, h
        for d in range(dim):
            out[idx, d] = y[d]
            if abs(y[d]) > bound or not np.isfinite(y[d]):
                return 1, idx, h
    return 0, n, h


def integrate_polynomial(
    exponents,
    coef,
    x0,
    t_out,
    rtol=1e-9,
    atol=1e-9,
    state_bound=1e6,
    wall_clock_cap=None,
    max_steps=5_000_000,
    chunk=1000,
):
    """Integrate ``dx/dt = coef @ theta(x)`` and sample on ``t_out``.

    Returns ``(values, status, n_valid)``: ``values`` has shape
    ``[len(t_out), dim]``; rows at and beyond ``n_valid`` are NaN when the
    run stopped early.  ``status`` is one of ``ok``, ``diverged``, ``stiff``,
    ``timeout``.
    """
    exps = np.ascontiguousarray(exponents, dtype=np.int64)
    coef = np.ascontiguousarray(coef, dtype=float)
    x0 = np.asarray(x0, dtype=float).copy()
    t_out = np.asarray(t_out, dtype=float)
    n = t_out.size
    out = np.full((n, x0.size), np.nan)
    out[0] = x0
    if np.any(np.abs(x0) > state_bound) or not np.all(np.isfinite(x0)):
        return out, "diverged", 0
    start = time.perf_counter()
    h = min(1e-3, (t_out[1] - t_out[0]) if n > 1 else 1e-3)
    pos = 0
    steps_left = max_steps
    while pos < n - 1:
        stop = min(n - 1, pos + chunk)
        seg = np.empty((stop - pos + 1, x0.size))
        seg[0] = out[pos]
        status, filled, h = _integrate(
            out[pos], t_out[pos : stop + 1], exps, coef, rtol, atol, state_bound, h,
            steps_left, _A, _B, _C, _E, seg,
        )
        out[pos + 1 : pos + filled] = seg[1:filled]
        if status != STATUS_OK:
            out[pos + filled :] = np.nan
            return out, _STATUS_NAMES[status], pos + filled
        pos = stop
        if wall_clock_cap is not None and time.perf_counter() - start > wall_clock_cap and pos < n - 1:
            out[pos + 1 :] = np.nan
            return out, "timeout", pos + 1
    return out, "ok", n
