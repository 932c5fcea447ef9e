"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them one to one.
"""
from __future__ import annotations

import numpy as np

F_ZERO = 0
F_L1 = 1
F_POWER2 = 2

STATUS_MAXITER = 0
STATUS_TOL = 1
STATUS_STAGNATION = 2
STATUS_DIVERGED = 3

BACKEND = "python"


def lr_norm(v: np.ndarray, w: np.ndarray, r: float) -> float:
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        return 0.0
    if not np.isfinite(m):
        return float("inf")
    u = np.abs(v) / m
    if r == 2.0:
        return m * float(np.sqrt(np.dot(w, u * u)))
    return m * float(np.dot(w, u**r)) ** (1.0 / r)


def lr_duality_map(v: np.ndarray, w: np.ndarray, r: float, q: float) -> np.ndarray:
    if r == 2.0 and q == 2.0:
        return w * v
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        return np.zeros_like(v)
    u = v / m
    au = np.abs(u)
    if r == 2.0:
        nu = float(np.sqrt(np.dot(w, au * au)))
        core = w * u
    else:
        nu = float(np.dot(w, au**r)) ** (1.0 / r)
        core = w * au ** (r - 1.0) * np.sign(u)
    return core * (nu ** (q - r) * m ** (q - 1.0))


def _res_f(xs, wxd, rxd, f_kind, step):
    if f_kind == F_L1:
        xs = np.sign(xs) * np.maximum(np.abs(xs) - step, 0.0)
    out = lr_duality_map(xs, wxd, rxd, 2.0)
    if f_kind == F_POWER2:
        out = out / (step + 1.0)
    return out


def cpbs_dense_run(
    T, y0, wy, rx, wx, f_kind, f_scale, sigma, tau, theta,
    x0, p0, max_iter, x_ref=None, tol=0.0, stag_tol=0.0,
):
    """Fused CP-BS loop for a dense operator.

    Handles ``X = l^r_W``, ``Y = l^2_{wy}``, quadratic data ``1/2||.-y0||_Y^2``
    and ``f`` in {0, scale*||.||_1, scale/2*||.||_X^2}.

    Stagnation means the largest change of both ``x`` and ``p`` is below
    ``stag_tol`` times the largest entry.

    Returns ``(x, p, k, status, err)`` where ``k`` is the number of iterations
    performed and ``err`` the last l1 distance to ``x_ref`` (nan without one).
    """
    T = np.ascontiguousarray(T, dtype=float)
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    xh = x.copy()
    wx = np.asarray(wx, dtype=float)
    wy = np.asarray(wy, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    rxd = rx / (rx - 1.0) if rx != 2.0 else 2.0
    wxd = wx if rx == 2.0 and np.all(wx == 1.0) else (1.0 / wx if rx == 2.0 else wx ** (1.0 - rxd))
    jx = lr_duality_map(x, wx, rx, 2.0)
    step = tau * f_scale
    status = STATUS_MAXITER
    err = float("nan")
    k = 0
    while k < max_iter:
        yin = p / wy + sigma * (T @ xh)
        pn = wy * ((yin - sigma * y0) / (sigma + 1.0))
        dp = float(np.max(np.abs(pn - p)))
        p = pn
        xs = jx - tau * (T.T @ p)
        xn = _res_f(xs, wxd, rxd, f_kind, step)
        xh = xn + theta * (xn - x)
        dx = float(np.max(np.abs(xn - x)))
        x = xn
        jx = lr_duality_map(x, wx, rx, 2.0)
        k += 1
        if not np.isfinite(dx):
            status = STATUS_DIVERGED
            break
        if x_ref is not None:
            err = float(np.sum(np.abs(x - x_ref)))
            if err <= tol:
                status = STATUS_TOL
                break
        if (stag_tol > 0.0 and dx <= stag_tol * max(float(np.max(np.abs(x))), 1e-300)
                and dp <= stag_tol * max(float(np.max(np.abs(p))), 1e-300)):
            status = STATUS_STAGNATION
            break
    return x, p, k, status, err
