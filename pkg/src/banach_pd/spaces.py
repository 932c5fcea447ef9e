"""Finite-dimensional Banach space geometry.

Two families of spaces are supported, both paired with their duals through
the plain Euclidean inner product ``<x, x*> = sum(x * x*)``:

* :class:`WeightedLr` -- weighted sequence spaces with norm
  ``(sum_j w_j |x_j|^r)^(1/r)``.
* :class:`SobolevPeriodic` -- discrete periodic Sobolev spaces ``H^{s,r}``
  on a regular ``N^d`` grid, normed by ``||Lambda_s v||_{l^r}`` where
  ``Lambda_s`` is the Bessel potential (Fourier multiplier
  ``(1 + |xi|^2)^(-s/2)``).

Vectors are plain real numpy arrays. Whether an array lives in the primal or
the dual space is determined by which descriptor it is handed to: a dual
vector of ``X`` is measured with ``X.dual``.
"""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from . import _kernels

__all__ = [
    "Space",
    "WeightedLr",
    "SobolevPeriodic",
    "conjugate_exponent",
    "norm",
    "duality_map",
    "inverse_duality_map",
    "bregman",
    "bessel_potential",
    "convexity_constant",
]

# Safety factor applied to the sharp 2-convexity constant r - 1 of l^r.
KAPPA = 0.99


def conjugate_exponent(r: float) -> float:
    """Return ``r*`` with ``1/r + 1/r* = 1``."""
    if not r > 1.0:
        raise ValueError(f"exponent must be > 1, got {r}")
    if r == 2.0:
        return 2.0
    return r / (r - 1.0)


class Space:
    """Common interface of the finite-dimensional spaces."""

    r: float
    #: whether the space plays the role of X or Y* (must be 2-convex).
    primal_role: bool = True

    @property
    def shape(self) -> tuple[int, ...]:
        raise NotImplementedError

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dual(self) -> "Space":
        raise NotImplementedError

    @property
    def is_hilbert(self) -> bool:
        return self.r == 2.0

    def check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != self.shape:
            raise ValueError(f"vector shape {v.shape} does not match space shape {self.shape}")
        return v

    def norm(self, v: np.ndarray) -> float:
        raise NotImplementedError

    def duality_map(self, v: np.ndarray, q: float = 2.0) -> np.ndarray:
        raise NotImplementedError

    def inverse_duality_map(self, v_star: np.ndarray, q: float = 2.0) -> np.ndarray:
        """Inverse of :meth:`duality_map`, i.e. ``J_{q*, X*}``."""
        return self.dual.duality_map(v_star, conjugate_exponent(q))

    def bregman(self, u: np.ndarray, x: np.ndarray) -> float:
        """Bregman distance of ``1/2 ||.||^2`` between ``u`` and ``x``.

        Evaluated as ``1/2 ||u||^2 + 1/2 ||x||^2 - <u, J(x)>``, which equals the
        textbook form because ``<x, J(x)> = ||x||^2``.
        """
        u = self.check(u)
        x = self.check(x)
        nu = self.norm(u)
        nx = self.norm(x)
        val = 0.5 * nu * nu + 0.5 * nx * nx - float(np.vdot(u, self.duality_map(x)))
        return max(val, 0.0)

    def convexity_constant(self) -> float:
        return convexity_constant(self)


class WeightedLr(Space):
    """Weighted sequence space ``l^r_W``.

    Parameters
    ----------
    r : float
        Exponent, strictly greater than one.
    weights : array_like or int
        Positive weights. An integer ``n`` gives unit weights of length ``n``.
    """

    def __init__(self, r: float, weights, primal_role: bool = True):
        r = float(r)
        if not r > 1.0 or not math.isfinite(r):
            raise ValueError(f"exponent must be in (1, inf), got {r}")
        if np.isscalar(weights) and float(weights).is_integer():
            w = np.ones(int(weights))
            self._unit = True
        else:
            w = np.array(weights, dtype=float)
            self._unit = bool(np.all(w == 1.0))
        if w.ndim == 0 or w.size == 0:
            raise ValueError("weights must be a non-empty array")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be strictly positive and finite")
        w.setflags(write=False)
        self.r = r
        self.weights = w
        self.primal_role = primal_role

    def __repr__(self) -> str:
        wdesc = "1" if self._unit else "W"
        return f"WeightedLr(r={self.r:g}, n={self.weights.size}, weights={wdesc})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WeightedLr)
            and self.r == other.r
            and self.weights.shape == other.weights.shape
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self) -> int:
        return hash((self.r, self.weights.tobytes()))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape

    @cached_property
    def dual(self) -> "WeightedLr":
        # The dual norm under the Euclidean pairing carries weights W^(1 - r*).
        rs = conjugate_exponent(self.r)
        if self._unit:
            w = self.weights
        elif self.r == 2.0:
            w = 1.0 / self.weights
        else:
            w = self.weights ** (1.0 - rs)
        d = WeightedLr(rs, w, primal_role=not self.primal_role)
        d.__dict__["dual"] = self
        return d

    def norm(self, v: np.ndarray) -> float:
        v = self.check(v)
        return _kernels.lr_norm(v.ravel(), self.weights.ravel(), self.r)

    def duality_map(self, v: np.ndarray, q: float = 2.0) -> np.ndarray:
        v = self.check(v)
        if not q > 1.0:
            raise ValueError(f"duality map exponent must be > 1, got {q}")
        out = _kernels.lr_duality_map(v.ravel(), self.weights.ravel(), self.r, float(q))
        return out.reshape(self.shape)


def _frequency_grid(shape: tuple[int, ...], a: float) -> np.ndarray:
    """Squared modulus ``|xi|^2`` of the integer dual grid, scaled by ``1/a``."""
    axes = [np.fft.fftfreq(n, d=1.0 / n) / a for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return sum(m * m for m in mesh)


class SobolevPeriodic(Space):
    """Discrete periodic Sobolev space ``H^{s,r}`` on an ``N^d`` grid.

    Parameters
    ----------
    r : float
        Integrability exponent, ``r > 1``.
    s : float
        Smoothness order, any real number.
    shape : tuple of int
        Grid shape; every axis must have an even number of points.
    a : float
        Half-width factor of the spatial grid ``a * T_N``. The dual frequency
        grid is divided by ``a``.
    """

    def __init__(self, r: float, s: float, shape, a: float = 1.0, primal_role: bool = True):
        r = float(r)
        if not r > 1.0 or not math.isfinite(r):
            raise ValueError(f"exponent must be in (1, inf), got {r}")
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        if any(n < 2 or n % 2 for n in shape):
            raise ValueError(f"grid sizes must be even and >= 2, got {shape}")
        if not a > 0:
            raise ValueError("grid scale a must be positive")
        self.r = r
        self.s = float(s)
        self._shape = shape
        self.a = float(a)
        self.primal_role = primal_role
        self._lr = WeightedLr(r, self.size, primal_role=primal_role)

    def __repr__(self) -> str:
        return f"SobolevPeriodic(r={self.r:g}, s={self.s:g}, shape={self._shape}, a={self.a:g})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SobolevPeriodic)
            and (self.r, self.s, self._shape, self.a) == (other.r, other.s, other._shape, other.a)
        )

    def __hash__(self) -> int:
        return hash((self.r, self.s, self._shape, self.a))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def is_hilbert(self) -> bool:
        return self.r == 2.0 and self.s == 0.0

    @cached_property
    def dual(self) -> "SobolevPeriodic":
        d = SobolevPeriodic(
            conjugate_exponent(self.r), -self.s, self._shape, self.a, primal_role=not self.primal_role
        )
        d.__dict__["dual"] = self
        return d

    @cached_property
    def _xi2(self) -> np.ndarray:
        return _frequency_grid(self._shape, self.a)

    def bessel(self, v: np.ndarray, s: float | None = None) -> np.ndarray:
        """Apply ``Lambda_s`` (defaults to the space's own order)."""
        s = self.s if s is None else float(s)
        v = self.check(v)
        if s == 0.0:
            return v.copy()
        mult = (1.0 + self._xi2) ** (-0.5 * s)
        return np.fft.ifftn(mult * np.fft.fftn(v)).real

    def norm(self, v: np.ndarray) -> float:
        return self._lr.norm(self.bessel(v).ravel().reshape(self._lr.shape))

    def duality_map(self, v: np.ndarray, q: float = 2.0) -> np.ndarray:
        # Lambda_s is symmetric for the Euclidean pairing, so the map that is
        # consistent with <v, J v> = ||v||^q is Lambda_s J_{l^r} Lambda_s.
        u = self.bessel(v).reshape(self._lr.shape)
        ju = self._lr.duality_map(u, q).reshape(self._shape)
        return self.bessel(ju)


def norm(space: Space, v: np.ndarray) -> float:
    return space.norm(v)


def duality_map(space: Space, v: np.ndarray, q: float = 2.0) -> np.ndarray:
    """Duality map ``J_{q,space}``; maps ``space`` into ``space.dual``."""
    return space.duality_map(v, q)


def inverse_duality_map(space: Space, v_star: np.ndarray, q: float = 2.0) -> np.ndarray:
    return space.inverse_duality_map(v_star, q)


def bregman(space: Space, u: np.ndarray, x: np.ndarray) -> float:
    return space.bregman(u, x)


def bessel_potential(space: SobolevPeriodic, s: float, v: np.ndarray) -> np.ndarray:
    return space.bessel(v, s)


def convexity_constant(space: Space) -> float:
    """Constant ``c`` with ``B(u, x) >= c/2 ||u - x||^2``.

    Uses ``0.99 (r - 1)`` for ``r < 2`` and exactly one in the Hilbert case.
    Spaces with ``r > 2`` are not 2-convex; for those only the dual role
    makes sense and a ``ValueError`` is raised.
    """
    r = space.r
    if r > 2.0:
        raise ValueError(
            f"{space!r} is not 2-convex (r > 2); use it as Y, i.e. pass the dual descriptor"
        )
    if r == 2.0:
        return 1.0
    return min(KAPPA * (r - 1.0), 1.0)
