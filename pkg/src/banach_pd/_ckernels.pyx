# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow, sqrt, isfinite
from scipy.linalg.cython_blas cimport dgemv

from ._pykernels import lr_duality_map as _py_lr_duality_map

cnp.import_array()

cdef enum:
    F_ZERO = 0
    F_L1 = 1
    F_POWER2 = 2

BACKEND = "cython"


cdef double _lr_norm(const double[::1] v, const double[::1] w, double r) noexcept nogil:
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double m = 0.0, a, s = 0.0
    for i in range(n):
        a = fabs(v[i])
        if a > m or a != a:
            m = a
    if m == 0.0:
        return 0.0
    if not isfinite(m):
        return m
    if r == 2.0:
        for i in range(n):
            a = v[i] / m
            s += w[i] * a * a
        return m * sqrt(s)
    for i in range(n):
        s += w[i] * pow(fabs(v[i]) / m, r)
    return m * pow(s, 1.0 / r)


cdef void _lr_dmap(const double[::1] v, const double[::1] w, double r, double q,
                   double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double m = 0.0, a, nu, scale, u
    if r == 2.0 and q == 2.0:
        for i in range(n):
            out[i] = w[i] * v[i]
        return
    for i in range(n):
        a = fabs(v[i])
        if a > m or a != a:
            m = a
    if m == 0.0:
        for i in range(n):
            out[i] = 0.0
        return
    if r == 2.0:
        nu = _lr_norm(v, w, r) / m
        scale = pow(nu, q - r) * pow(m, q - 1.0)
        for i in range(n):
            out[i] = w[i] * (v[i] / m) * scale
        return
    # one pow per entry: |u|^r = |u| * |u|^(r-1)
    cdef double s = 0.0, t
    for i in range(n):
        u = v[i] / m
        if u != 0.0:
            t = pow(fabs(u), r - 1.0)
            s += w[i] * t * fabs(u)
            out[i] = w[i] * t if u > 0.0 else -w[i] * t
        else:
            out[i] = 0.0 * u
    nu = pow(s, 1.0 / r)
    scale = pow(nu, q - r) * pow(m, q - 1.0)
    for i in range(n):
        out[i] *= scale


def lr_norm(v, w, double r):
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    return _lr_norm(vv, ww, r)


# above this length numpy's vectorized pow beats the scalar libm loop
DMAP_NUMPY_CUTOFF = 1024


def lr_duality_map(v, w, double r, double q):
    if np.size(v) > DMAP_NUMPY_CUTOFF:
        return _py_lr_duality_map(np.asarray(v, dtype=np.float64), np.asarray(w, dtype=np.float64), r, q)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    out = np.empty(vv.shape[0], dtype=np.float64)
    cdef double[::1] oo = out
    _lr_dmap(vv, ww, r, q, oo)
    return out


cdef inline void _matvec(const double[:, ::1] A, const double[::1] x, double[::1] y,
                         bint trans) noexcept nogil:
    # A is row-major (m x n); BLAS sees it as column-major (n x m).
    cdef int m = <int>A.shape[0]
    cdef int n = <int>A.shape[1]
    cdef int one = 1
    cdef double alpha = 1.0, beta = 0.0
    cdef char t
    if trans:
        t = b'N'
    else:
        t = b'T'
    dgemv(&t, &n, &m, &alpha, <double*>&A[0, 0], &n, <double*>&x[0], &one,
          &beta, &y[0], &one)


def cpbs_dense_run(T, y0, wy, double rx, wx, int f_kind, double f_scale,
                   double sigma, double tau, double theta, x0, p0, long max_iter,
                   x_ref=None, double tol=0.0, double stag_tol=0.0):
    cdef const double[:, ::1] A = np.ascontiguousarray(T, dtype=np.float64)
    cdef Py_ssize_t ny = A.shape[0], nx = A.shape[1], i
    cdef const double[::1] yy0 = np.ascontiguousarray(y0, dtype=np.float64)
    cdef const double[::1] wyy = np.ascontiguousarray(wy, dtype=np.float64)
    wx_arr = np.ascontiguousarray(wx, dtype=np.float64)
    cdef const double[::1] wxx = wx_arr
    cdef double rxd
    if rx == 2.0:
        rxd = 2.0
        wxd_arr = wx_arr if np.all(wx_arr == 1.0) else 1.0 / wx_arr
    else:
        rxd = rx / (rx - 1.0)
        wxd_arr = wx_arr ** (1.0 - rxd)
    cdef const double[::1] wxd = np.ascontiguousarray(wxd_arr)
    x_np = np.array(x0, dtype=np.float64)
    p_np = np.array(p0, dtype=np.float64)
    cdef double[::1] x = x_np
    cdef double[::1] p = p_np
    cdef double[::1] xh = x_np.copy()
    cdef double[::1] xn = np.empty(nx)
    cdef double[::1] jx = np.empty(nx)
    cdef double[::1] xs = np.empty(nx)
    cdef double[::1] ty = np.empty(ny)
    cdef double[::1] tx = np.empty(nx)
    cdef bint has_ref = x_ref is not None
    cdef const double[::1] xr
    if has_ref:
        xr = np.ascontiguousarray(x_ref, dtype=np.float64)
    cdef double step = tau * f_scale
    cdef double err = np.nan, dx, dp, pmax, d, xmax, a, yin
    cdef long k = 0
    cdef int status = 0
    with nogil:
        _lr_dmap(x, wxx, rx, 2.0, jx)
        while k < max_iter:
            _matvec(A, xh, ty, False)
            dp = 0.0
            pmax = 0.0
            for i in range(ny):
                yin = p[i] / wyy[i] + sigma * ty[i]
                a = wyy[i] * ((yin - sigma * yy0[i]) / (sigma + 1.0))
                d = a - p[i]
                if fabs(d) > dp or d != d:
                    dp = fabs(d)
                if fabs(a) > pmax:
                    pmax = fabs(a)
                p[i] = a
            _matvec(A, p, tx, True)
            for i in range(nx):
                a = jx[i] - tau * tx[i]
                if f_kind == F_L1:
                    if a > step:
                        a = a - step
                    elif a < -step:
                        a = a + step
                    else:
                        a = 0.0
                xs[i] = a
            _lr_dmap(xs, wxd, rxd, 2.0, xn)
            if f_kind == F_POWER2:
                for i in range(nx):
                    xn[i] = xn[i] / (step + 1.0)
            dx = 0.0
            xmax = 0.0
            for i in range(nx):
                d = xn[i] - x[i]
                xh[i] = xn[i] + theta * d
                if fabs(d) > dx or d != d:
                    dx = fabs(d)
                x[i] = xn[i]
                if fabs(xn[i]) > xmax:
                    xmax = fabs(xn[i])
            _lr_dmap(x, wxx, rx, 2.0, jx)
            k += 1
            if not isfinite(dx):
                status = 3
                break
            if has_ref:
                err = 0.0
                for i in range(nx):
                    err += fabs(x[i] - xr[i])
                if err <= tol:
                    status = 1
                    break
            if stag_tol > 0.0:
                if xmax < 1e-300:
                    xmax = 1e-300
                if pmax < 1e-300:
                    pmax = 1e-300
                if dx <= stag_tol * xmax and dp <= stag_tol * pmax:
                    status = 2
                    break
    return x_np, p_np, k, status, err
