"""Generalized resolvents ``(tau d h + J_Z)^{-1}`` and data fidelities.

Primal penalties (``f`` on ``X``) expose ``resolvent(step, x_star)`` mapping a
dual vector into ``X``. Data fidelities (``g`` on ``Y``) expose the resolvent
of the conjugate, ``gstar_resolvent(step, y)``, mapping ``Y`` into ``Y*``; it
is obtained from the resolvent-type map ``(J_{Y*} o dg + sigma I)^{-1}``
through the generalized Moreau identity, so ``g*`` never has to be formed.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import optimize

from .spaces import Space, SobolevPeriodic, WeightedLr, conjugate_exponent

__all__ = [
    "ResolventError",
    "solve_power_root",
    "res_power_norm",
    "res_l1",
    "res_box",
    "box_power_min",
    "moreau_gstar_resolvent",
    "res_quadratic_data",
    "res_kl_inner",
    "argmin_oracle",
    "OracleResult",
    "Zero",
    "PowerNorm",
    "L1",
    "Box",
    "QuadraticData",
    "KLData",
    "L1Data",
    "PowerNormData",
    "ShiftedData",
]


class ResolventError(RuntimeError):
    pass


def _safe_pow(x: float, p: float) -> float:
    try:
        return x**p
    except OverflowError:
        return math.inf


def solve_power_root(a: float, b: float, e: float, c: float, tol: float = 1e-12, maxiter: int = 100) -> float:
    """Nonnegative root of ``a t^e + b t = c`` for ``a >= 0``, ``b > 0``, ``e > 0``.

    The left side is strictly increasing on ``[0, inf)`` so the root is
    unique. Newton steps are accepted while they stay inside the current
    bracket; otherwise the bracket is bisected.
    """
    if c <= 0.0:
        return 0.0
    if a == 0.0:
        return c / b
    # one of the two terms carries at least half of c at the root
    with np.errstate(over="ignore", under="ignore"):
        lo = min(_safe_pow(c / (2.0 * a), 1.0 / e), c / (2.0 * b))
        hi = min(_safe_pow(c / a, 1.0 / e), c / b)
    if hi <= 0.0:
        return 0.0  # the root underflows
    t = hi
    thresh = tol * (1.0 + c)
    for _ in range(maxiter):
        fv = a * t**e + b * t - c
        if abs(fv) <= thresh:
            return t
        if fv > 0.0:
            hi = t
        else:
            lo = t
        d = a * e * t ** (e - 1.0) + b if t > 0.0 else math.inf
        tn = t - fv / d if math.isfinite(d) else 0.5 * (lo + hi)
        if not (lo < tn < hi):
            # geometric bisection reaches tiny roots (small e, large a) quickly
            tn = math.sqrt(lo * hi) if lo > 0.0 and hi > 4.0 * lo else (0.5 * (lo + hi) if lo > 0.0 else hi / 16.0)
        if tn == t:
            return t
        t = tn
    fv = a * t**e + b * t - c
    if abs(fv) > 1e3 * thresh:
        raise ResolventError(f"power root did not converge (residual {fv:.3e})")
    return t


def _as_lr(space: Space, what: str) -> WeightedLr:
    if not isinstance(space, WeightedLr):
        raise ValueError(f"{what} is only available on weighted l^r spaces, got {space!r}")
    return space


# --------------------------------------------------------------------------
# closed-form resolvents


def res_power_norm(space: Space, r: float, tau: float, x_star: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Resolvent of ``f = scale/r ||x||_X^r``.

    The result is ``J_{X*}(x*) / (tau*scale*alpha^(r-2) + 1)`` with ``alpha`` the
    root of ``tau*scale*alpha^(r-1) + alpha = ||x*||_{X*}``.
    """
    if not tau > 0 or not r > 1:
        raise ValueError("need tau > 0 and r > 1")
    u = space.dual.duality_map(x_star)
    t = tau * scale
    if r == 2.0:
        return u / (t + 1.0)
    alpha = solve_power_root(t, 1.0, r - 1.0, space.dual.norm(x_star))
    if alpha == 0.0:
        return np.zeros_like(u)
    return u / (t * alpha ** (r - 2.0) + 1.0)


def res_l1(space: Space, tau: float, x_star: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Resolvent of ``scale * ||x||_1``: soft-threshold, then map into ``X``."""
    if isinstance(space, SobolevPeriodic):
        raise ValueError("l1 resolvent is not separable in Sobolev spaces")
    x_star = np.asarray(x_star, dtype=float)
    shrunk = np.sign(x_star) * np.maximum(np.abs(x_star) - tau * scale, 0.0)
    return space.dual.duality_map(shrunk)


def box_power_min(space: Space, c, lower, upper, q: float = 2.0, s: float = 1.0):
    """Minimize ``s/q ||z||^q - <c, z>`` over the box ``[lower, upper]``.

    For a fixed norm level ``rho`` the problem separates into monotone scalar
    problems whose minimizers are clipped powers of ``c``. The norm level is
    then the unique fixed point ``rho = ||z(rho)||``.
    """
    X = _as_lr(space, "box minimization")
    c = np.asarray(c, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), X.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), X.shape)
    if np.any(lower > upper):
        raise ValueError("empty box: lower > upper")
    w, r = X.weights, X.r
    ac, sg = np.abs(c), np.sign(c)

    def z_of(rho):
        mag = (rho ** (r - q) * ac / (s * w)) ** (1.0 / (r - 1.0)) if rho > 0 else np.where(ac > 0, np.inf, 0.0)
        return np.clip(sg * mag, lower, upper)

    if r == q:
        return z_of(1.0)
    z0 = np.clip(0.0, lower, upper)
    if not np.any(ac > 0):
        return z0.copy()

    def phi(t):
        rho = math.exp(t)
        return X.norm(z_of(rho)) - rho

    unconstrained = (X.dual.norm(c / s)) ** (1.0 / (q - 1.0))
    t0 = math.log(max(unconstrained, 1e-300))
    a, b = t0, t0
    fa = fb = phi(t0)
    step = 1.0
    for _ in range(200):
        if fa > 0:
            break
        a -= step
        step *= 2
        fa = phi(a)
    step = 1.0
    for _ in range(200):
        if fb < 0:
            break
        b += step
        step *= 2
        fb = phi(b)
    if fa == 0.0:
        return z_of(math.exp(a))
    if fb == 0.0:
        return z_of(math.exp(b))
    if not (fa > 0 > fb):
        # the only remaining possibility is the minimizer z = 0 (rho -> 0)
        return z0.copy()
    t = optimize.brentq(phi, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return z_of(math.exp(t))


def res_box(space: Space, lower, upper, x_star: np.ndarray) -> np.ndarray:
    """Generalized (Bregman) projection of ``J_{X*}(x*)`` onto a box."""
    return box_power_min(space, x_star, lower, upper, q=2.0, s=1.0)


def moreau_gstar_resolvent(space_y: Space, sigma: float, g_inner, y: np.ndarray) -> np.ndarray:
    """``(sigma d g* + J_{Y*})^{-1}(y) = J_Y(y - sigma (J_{Y*} o dg + sigma I)^{-1}(y))``.

    ``g_inner(sigma, y)`` must evaluate the inner map ``(J_{Y*} o dg + sigma I)^{-1}``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    ybar = g_inner(sigma, y)
    return space_y.duality_map(y - sigma * ybar)


def res_quadratic_data(space_y: Space, sigma: float, y0: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Resolvent of ``g*`` for ``g = 1/2 ||. - y0||_Y^2``: ``J_Y((y - sigma y0)/(sigma + 1))``."""
    return space_y.duality_map((y - sigma * y0) / (sigma + 1.0))


def res_kl_inner(sigma: float, y_obs: np.ndarray, W: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inner map ``(J_{Y*} o dS + sigma I)^{-1}`` for the Poisson log-likelihood on ``l^2_W``."""
    winv = 1.0 / W
    d = y - winv
    return (d + np.sqrt(d * d + 4.0 * sigma * winv * y_obs)) / (2.0 * sigma)


# --------------------------------------------------------------------------
# test-facing brute-force minimizer


class OracleResult(np.ndarray):
    """Array subclass carrying the oracle's convergence flag and objective."""

    converged: bool = True
    fun: float = math.nan


def _min_1d(phi, t0, lo, hi, scale):
    # Expand a bracket around t0 (phi is convex), then bounded Brent.
    d = max(scale, 1e-8)
    a, b = max(t0 - d, lo), min(t0 + d, hi)
    f0 = phi(t0)
    for _ in range(80):
        if a <= lo or phi(a) > f0:
            break
        d *= 2
        a = max(t0 - d, lo)
    d = max(scale, 1e-8)
    for _ in range(80):
        if b >= hi or phi(b) > f0:
            break
        d *= 2
        b = min(t0 + d, hi)
    if b - a <= 0:
        return t0
    res = optimize.minimize_scalar(phi, bounds=(a, b), method="bounded", options={"xatol": 1e-13, "maxiter": 500})
    t = float(res.x)
    return t if phi(t) <= f0 else t0


def argmin_oracle(space: Space, h, step: float, u: np.ndarray, bounds=None, x0=None,
                  tol: float = 1e-13, max_sweeps: int = 400) -> OracleResult:
    """Brute-force ``argmin_z step*h(z) - <z, u> + 1/2 ||z||^2`` for small dimensions.

    A quasi-Newton warm start is polished by exact coordinate minimization,
    which converges for a smooth norm term plus a separable or smooth ``h``.
    ``h`` may return ``inf`` outside its domain; ``bounds`` is an optional pair
    of arrays restricting the search. Meant for tests only.
    """
    u = np.asarray(u, dtype=float)
    n = u.size
    if n > 8:
        raise ValueError("argmin_oracle is restricted to dimension <= 8")
    shape = u.shape
    lo = np.full(n, -np.inf) if bounds is None else np.broadcast_to(np.asarray(bounds[0], float), shape).ravel()
    hi = np.full(n, np.inf) if bounds is None else np.broadcast_to(np.asarray(bounds[1], float), shape).ravel()

    def obj(zf):
        z = zf.reshape(shape)
        hv = h(z)
        if not np.isfinite(hv):
            return math.inf
        nz = space.norm(z)
        return step * hv - float(np.vdot(z, u)) + 0.5 * nz * nz

    if x0 is None:
        z = np.clip(space.dual.duality_map(u).ravel(), lo, hi)
        if not np.isfinite(obj(z)):
            z = np.clip(np.zeros(n), lo, hi)
            z = np.where(np.isfinite(z), z, 0.0)
    else:
        z = np.array(x0, dtype=float).ravel()
    if np.isfinite(obj(z)):
        lb = [(a if np.isfinite(a) else None, b if np.isfinite(b) else None) for a, b in zip(lo, hi)]
        try:
            with warnings.catch_warnings():
                # finite differences across the domain edge of h give inf - inf
                warnings.simplefilter("ignore", RuntimeWarning)
                res = optimize.minimize(obj, z, method="L-BFGS-B", bounds=lb,
                                        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
            if np.isfinite(res.fun) and res.fun <= obj(z):
                z = np.clip(res.x, lo, hi)
        except (ValueError, FloatingPointError):
            pass
    converged = False
    scale = max(float(np.max(np.abs(z))), 1.0)
    for _ in range(max_sweeps):
        zold = z.copy()
        for j in range(n):
            def phi(t, j=j):
                zz = z.copy()
                zz[j] = t
                return obj(zz)
            z[j] = _min_1d(phi, z[j], lo[j], hi[j], 1e-3 * scale)
        if np.max(np.abs(z - zold)) <= tol * scale:
            converged = True
            break
    out = z.reshape(shape).view(OracleResult)
    out.converged = converged
    out.fun = obj(z)
    return out


# --------------------------------------------------------------------------
# primal penalties


class PrimalFn:
    """Convex penalty ``f`` on ``X`` together with its generalized resolvent."""

    #: constant ``gamma`` with ``f(u) - f(x) - <u - x, x*> >= gamma B_X(u, x)``
    modulus = 0.0
    tag = "abstract"

    def __init__(self, space: Space):
        self.space = space

    def value(self, x) -> float:
        raise NotImplementedError

    def resolvent(self, step: float, x_star) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, step, x_star):
        return self.resolvent(step, x_star)

    def box_min(self, c, lower, upper):
        """Minimize ``<c, z> + f(z)`` over a box; returns ``(z, value)``."""
        raise NotImplementedError(f"box minimization not available for {self.tag}")


class Zero(PrimalFn):
    tag = "zero"

    def value(self, x):
        return 0.0

    def resolvent(self, step, x_star):
        return self.space.dual.duality_map(x_star)

    def box_min(self, c, lower, upper):
        z = np.where(np.asarray(c) > 0, lower, upper)
        z = np.where(np.asarray(c) == 0, np.clip(0.0, lower, upper), z)
        return z, float(np.vdot(c, z))


class PowerNorm(PrimalFn):
    """``f(x) = scale/r ||x||_X^r``."""

    tag = "power_norm"

    def __init__(self, space, r: float = 2.0, scale: float = 1.0):
        super().__init__(space)
        if not r > 1 or not scale > 0:
            raise ValueError("PowerNorm needs r > 1 and scale > 0")
        self.r = float(r)
        self.scale = float(scale)

    @property
    def modulus(self):
        # only the squared norm reproduces the Bregman distance exactly
        return self.scale if self.r == 2.0 else 0.0

    def value(self, x):
        return self.scale / self.r * self.space.norm(x) ** self.r

    def resolvent(self, step, x_star):
        return res_power_norm(self.space, self.r, step, x_star, self.scale)

    def box_min(self, c, lower, upper):
        z = box_power_min(self.space, -np.asarray(c, float), lower, upper, q=self.r, s=self.scale)
        return z, float(np.vdot(c, z)) + self.value(z)


class L1(PrimalFn):
    """``f(x) = scale ||x||_1``."""

    tag = "l1"

    def __init__(self, space, scale: float = 1.0):
        super().__init__(space)
        if not scale > 0:
            raise ValueError("L1 needs scale > 0")
        self.scale = float(scale)

    def value(self, x):
        return self.scale * float(np.sum(np.abs(x)))

    def resolvent(self, step, x_star):
        return res_l1(self.space, step, x_star, self.scale)

    def box_min(self, c, lower, upper):
        c = np.asarray(c, float)
        lower = np.broadcast_to(lower, c.shape)
        upper = np.broadcast_to(upper, c.shape)
        cands = np.stack([lower, upper, np.clip(0.0, lower, upper)])
        vals = c * cands + self.scale * np.abs(cands)
        vals = np.where(np.isfinite(vals), vals, np.inf)
        idx = np.argmin(vals, axis=0)
        z = np.take_along_axis(cands, idx[None], axis=0)[0]
        return z, float(np.sum(np.take_along_axis(vals, idx[None], axis=0)))


class Box(PrimalFn):
    """Indicator of the box ``[lower, upper]``."""

    tag = "box"

    def __init__(self, space, lower, upper):
        super().__init__(space)
        self.lower = np.broadcast_to(np.asarray(lower, float), space.shape)
        self.upper = np.broadcast_to(np.asarray(upper, float), space.shape)
        if np.any(self.lower > self.upper):
            raise ValueError("empty box: lower > upper")

    def value(self, x):
        x = np.asarray(x)
        return 0.0 if np.all((x >= self.lower) & (x <= self.upper)) else math.inf

    def resolvent(self, step, x_star):
        return res_box(self.space, self.lower, self.upper, x_star)

    def box_min(self, c, lower, upper):
        lo = np.maximum(self.lower, lower)
        hi = np.minimum(self.upper, upper)
        if np.any(lo > hi):
            raise ValueError("empty intersection of boxes")
        return Zero(self.space).box_min(c, lo, hi)


# --------------------------------------------------------------------------
# data fidelities


class DataFidelity:
    """Convex data term ``g`` on ``Y``."""

    #: constant ``delta`` of the same convexity property for ``g*``
    modulus = 0.0
    tag = "abstract"

    def __init__(self, space: Space):
        self.space = space

    def value(self, y) -> float:
        raise NotImplementedError

    def conj_value(self, p) -> float:
        raise NotImplementedError(f"conjugate of {self.tag} is not available")

    def inner(self, sigma: float, y) -> np.ndarray:
        """``(J_{Y*} o dg + sigma I)^{-1}(y)``."""
        raise NotImplementedError

    def gradient(self, y) -> np.ndarray:
        """An element of ``dg(y)`` in ``Y*``."""
        raise NotImplementedError

    def gstar_resolvent(self, sigma: float, y) -> np.ndarray:
        return moreau_gstar_resolvent(self.space, sigma, self.inner, y)

    def __call__(self, sigma, y):
        return self.gstar_resolvent(sigma, y)

    def box_max(self, c, lower, upper) -> float:
        """``max <c, p> - g*(p)`` over a box in ``Y*``."""
        raise NotImplementedError(f"box maximization not available for {self.tag}")

    def shifted(self, c) -> "DataFidelity":
        """The function ``y -> g(y + c)``."""
        return ShiftedData(self, c)


class QuadraticData(DataFidelity):
    """``g(y) = 1/2 ||y - y0||_Y^2``."""

    tag = "quadratic"
    modulus = 1.0

    def __init__(self, space, y0):
        super().__init__(space)
        self.y0 = space.check(y0)

    def value(self, y):
        return 0.5 * self.space.norm(y - self.y0) ** 2

    def conj_value(self, p):
        return 0.5 * self.space.dual.norm(p) ** 2 + float(np.vdot(self.y0, p))

    def inner(self, sigma, y):
        return (y + self.y0) / (1.0 + sigma)

    def gradient(self, y):
        return self.space.duality_map(y - self.y0)

    def gstar_resolvent(self, sigma, y):
        return res_quadratic_data(self.space, sigma, self.y0, y)

    def box_max(self, c, lower, upper):
        cc = np.asarray(c, float) - self.y0
        p = box_power_min(self.space.dual, cc, lower, upper)
        return float(np.vdot(c, p)) - self.conj_value(p)

    def shifted(self, c):
        return QuadraticData(self.space, self.y0 - np.asarray(c, float))


class PowerNormData(DataFidelity):
    """``g(y) = 1/r ||y - y0||_Y^r``."""

    tag = "power_norm_data"

    def __init__(self, space, r, y0):
        super().__init__(space)
        if not r > 1:
            raise ValueError("r must be > 1")
        self.r = float(r)
        self.y0 = space.check(y0)

    @property
    def modulus(self):
        return 1.0 if self.r == 2.0 else 0.0

    def value(self, y):
        return self.space.norm(y - self.y0) ** self.r / self.r

    def conj_value(self, p):
        rs = conjugate_exponent(self.r)
        return self.space.dual.norm(p) ** rs / rs + float(np.vdot(self.y0, p))

    def _beta(self, sigma, y):
        return solve_power_root(1.0, sigma, self.r - 1.0, self.space.norm(y - sigma * self.y0))

    def inner(self, sigma, y):
        beta = self._beta(sigma, y)
        if beta == 0.0:
            return self.y0.copy()
        br = beta ** (self.r - 2.0)
        return (y + br * self.y0) / (br + sigma)

    def gradient(self, y):
        return self.space.duality_map(y - self.y0, self.r)

    def gstar_resolvent(self, sigma, y):
        beta = self._beta(sigma, y)
        if beta == 0.0:
            return np.zeros_like(np.asarray(y, float))
        br = beta ** (self.r - 2.0)
        return self.space.duality_map(br * (y - sigma * self.y0) / (br + sigma))

    def box_max(self, c, lower, upper):
        rs = conjugate_exponent(self.r)
        cc = np.asarray(c, float) - self.y0
        p = box_power_min(self.space.dual, cc, lower, upper, q=rs)
        return float(np.vdot(c, p)) - self.conj_value(p)


class L1Data(DataFidelity):
    """``g(y) = scale ||y - y0||_1`` on a weighted ``l^2`` space."""

    tag = "l1_data"

    def __init__(self, space, y0, scale: float = 1.0):
        super().__init__(space)
        if not (isinstance(space, WeightedLr) and space.r == 2.0):
            raise ValueError("L1Data requires a weighted l^2 data space")
        self.y0 = space.check(y0)
        self.scale = float(scale)

    def value(self, y):
        return self.scale * float(np.sum(np.abs(y - self.y0)))

    def conj_value(self, p):
        p = np.asarray(p, float)
        if np.any(np.abs(p) > self.scale * (1 + 1e-12)):
            return math.inf
        return float(np.vdot(self.y0, p))

    def inner(self, sigma, y):
        w = self.space.weights
        d = y / sigma - self.y0
        return self.y0 + np.sign(d) * np.maximum(np.abs(d) - self.scale / (sigma * w), 0.0)

    def gradient(self, y):
        return self.scale * np.sign(y - self.y0)

    def box_max(self, c, lower, upper):
        lo = np.maximum(lower, -self.scale)
        hi = np.minimum(upper, self.scale)
        cc = np.asarray(c, float) - self.y0
        p = np.where(cc > 0, hi, lo)
        return float(np.vdot(cc, p))


class KLData(DataFidelity):
    """Poisson negative log-likelihood ``sum y - y_obs ln y`` on ``Y = l^2_W``.

    Uses ``0 ln 0 = 0``; the value is ``+inf`` outside the domain.
    """

    tag = "kl"

    def __init__(self, space, y_obs):
        super().__init__(space)
        if not (isinstance(space, WeightedLr) and space.r == 2.0):
            raise ValueError("KLData requires a weighted l^2 data space")
        y_obs = space.check(y_obs)
        if np.any(y_obs < 0):
            raise ValueError("Poisson observations must be nonnegative")
        self.y_obs = y_obs

    def value(self, y):
        y = np.asarray(y, float)
        pos = self.y_obs > 0
        if np.any(y < 0) or np.any(y[pos] <= 0):
            return math.inf
        return float(np.sum(y) - np.sum(self.y_obs[pos] * np.log(y[pos])))

    def conj_value(self, p):
        p = np.asarray(p, float)
        pos = self.y_obs > 0
        if np.any(p[pos] >= 1.0) or np.any(p[~pos] > 1.0):
            return math.inf
        yo = self.y_obs[pos]
        return float(np.sum(yo * (np.log(yo) - 1.0) - yo * np.log1p(-p[pos])))

    def inner(self, sigma, y):
        return res_kl_inner(sigma, self.y_obs, self.space.weights, y)

    def gradient(self, y):
        y = np.asarray(y, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = 1.0 - np.where(self.y_obs > 0, self.y_obs / y, 0.0)
        return g


class ShiftedData(DataFidelity):
    """``y -> base(y + c)``; used for affine linearizations."""

    def __init__(self, base: DataFidelity, c):
        super().__init__(base.space)
        self.base = base
        self.c = base.space.check(c)
        self.tag = f"shifted_{base.tag}"
        self.modulus = base.modulus

    def value(self, y):
        return self.base.value(np.asarray(y) + self.c)

    def conj_value(self, p):
        return self.base.conj_value(p) - float(np.vdot(self.c, p))

    def inner(self, sigma, y):
        return self.base.inner(sigma, np.asarray(y) + sigma * self.c) - self.c

    def gradient(self, y):
        return self.base.gradient(np.asarray(y) + self.c)

    def gstar_resolvent(self, sigma, y):
        return self.base.gstar_resolvent(sigma, np.asarray(y) + sigma * self.c)

    def box_max(self, c, lower, upper):
        return self.base.box_max(np.asarray(c) + self.c, lower, upper)

    def shifted(self, c):
        return ShiftedData(self.base, self.c + np.asarray(c, float))
