"""Forward operators: dense matrices, the deconvolution kernel, the Fresnel
phase-retrieval map and its derivative, and operator-norm estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spaces import Space

__all__ = [
    "LinearOp",
    "MatrixOp",
    "FunctionOp",
    "conv_operator",
    "conv_grids",
    "adjoint_mismatch",
    "power_method",
    "PowerMethodInfo",
    "FresnelConfig",
    "fresnel_propagate",
    "PhaseRetrieval",
    "phase_forward",
    "phase_derivative",
]


class LinearOp:
    """Linear map with an adjoint for the Euclidean pairing.

    ``apply`` maps ``X -> Y``; ``adjoint`` maps ``Y* -> X*``. Both act on plain
    arrays of shapes ``in_shape`` and ``out_shape`` respectively.
    """

    in_shape: tuple
    out_shape: tuple
    #: dense matrix if available, used by the compiled solver loop
    matrix: np.ndarray | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    @property
    def T(self) -> "LinearOp":
        return FunctionOp(self.adjoint, self.apply, self.out_shape, self.in_shape)


class MatrixOp(LinearOp):
    def __init__(self, A):
        A = np.ascontiguousarray(A, dtype=float)
        if A.ndim != 2:
            raise ValueError("matrix operator needs a 2-d array")
        A.setflags(write=False)
        self.matrix = A
        self.in_shape = (A.shape[1],)
        self.out_shape = (A.shape[0],)

    def apply(self, x):
        return self.matrix @ x

    def adjoint(self, y):
        return self.matrix.T @ y

    def __repr__(self):
        return f"MatrixOp({self.out_shape[0]}x{self.in_shape[0]})"


class FunctionOp(LinearOp):
    def __init__(self, apply, adjoint, in_shape, out_shape):
        self._apply = apply
        self._adjoint = adjoint
        self.in_shape = tuple(np.atleast_1d(in_shape))
        self.out_shape = tuple(np.atleast_1d(out_shape))

    def apply(self, x):
        return self._apply(x)

    def adjoint(self, y):
        return self._adjoint(y)


def conv_grids(n_x: int = 64, n_y: int = 127):
    """Sample grids of ``[-1/2, 1/2]`` and ``[-1, 1]``."""
    return np.linspace(-0.5, 0.5, n_x), np.linspace(-1.0, 1.0, n_y)


def conv_operator(kernel_decay: float = 5.0, n_x: int = 64, n_y: int = 127,
                  quadrature: str = "trapezoid") -> MatrixOp:
    """Discretized convolution with ``k(t) = exp(-kernel_decay |t|)``.

    ``quadrature="trapezoid"`` weights the columns by ``h = 1/(n_x - 1)`` with
    halved end points; ``"none"`` is the plain discrete convolution sum.
    """
    if n_x < 2 or n_y < 2:
        raise ValueError("need n_x, n_y >= 2")
    s, t = conv_grids(n_x, n_y)
    A = np.exp(-kernel_decay * np.abs(t[:, None] - s[None, :]))
    if quadrature == "trapezoid":
        q = np.full(n_x, 1.0 / (n_x - 1))
        q[[0, -1]] *= 0.5
        A = A * q[None, :]
    elif quadrature != "none":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    return MatrixOp(A)


def adjoint_mismatch(op: LinearOp, trials: int = 20, seed: int = 0) -> float:
    """Largest relative violation of ``<Ax, y> = <x, A^T y>`` over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.out_shape)
        ax, aty = op.apply(x), op.adjoint(y)
        lhs, rhs = float(np.vdot(ax, y)), float(np.vdot(x, aty))
        scale = max(np.linalg.norm(ax) * np.linalg.norm(y), np.linalg.norm(x) * np.linalg.norm(aty), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


@dataclass
class PowerMethodInfo:
    norm: float
    iterations: int
    restarts: int
    converged: bool
    monotone: bool
    history: list = field(default_factory=list)


def _power_run(op, X, Y, x, iters, tol, rng, max_restarts):
    restarts = 0
    while True:
        nx = X.norm(x)
        if nx == 0.0 or not math.isfinite(nx):
            x = rng.standard_normal(op.in_shape)
            restarts += 1
            continue
        x = x / nx
        est = Y.norm(op.apply(x))
        history = [est]
        converged = False
        k = 0
        zero = False
        for k in range(1, iters + 1):
            z = X.dual.duality_map(op.adjoint(Y.duality_map(op.apply(x))))
            nz = X.norm(z)
            if nz == 0.0 or not math.isfinite(nz):
                zero = True
                break
            x = z / nz
            new = Y.norm(op.apply(x))
            history.append(new)
            if abs(new - est) <= tol * max(new, 1e-300):
                est = new
                converged = True
                break
            est = new
        if zero or est == 0.0:
            restarts += 1
            if restarts > max_restarts:
                raise RuntimeError("power method hit the zero vector repeatedly; is the operator zero?")
            x = rng.standard_normal(op.in_shape)
            continue
        return history, k, restarts, converged


def power_method(op: LinearOp, X: Space, Y: Space, iters: int = 500, tol: float = 1e-8,
                 seed: int = 0, x0=None, return_info: bool = False, max_restarts: int = 5,
                 starts: int = 1):
    """Estimate ``||T||_{X -> Y}`` with Boyd's nonlinear power iteration.

    Iterates ``x <- J_{X*}(T^T J_Y(T x))`` normalized in ``X`` and returns
    ``||T x||_Y``. For ``r != 2`` the value is a lower bound that is usually,
    but not provably, sharp; ``info.monotone`` reports whether the estimate
    never decreased.

    Parameters
    ----------
    starts : int
        Number of starting vectors. The first is ``x0`` (or a positive random
        vector), the rest are Gaussian. Off the Hilbert case the iteration can
        stall at a local maximum, and extra starts guard against that.
    """
    if starts < 1:
        raise ValueError("starts must be at least 1")
    rng = np.random.default_rng(seed)
    best = None
    restarts = 0
    for i in range(starts):
        if i == 0:
            x = np.abs(rng.standard_normal(op.in_shape)) + 0.1 if x0 is None else np.array(x0, float)
        else:
            x = rng.standard_normal(op.in_shape)
        history, k, r, converged = _power_run(op, X, Y, x, iters, tol, rng, max_restarts)
        restarts += r
        if best is None or max(history) > max(best[0]):
            best = (history, k, converged)
    history, k, converged = best
    est = max(history)
    if not return_info:
        return est
    monotone = all(b >= a * (1 - 1e-12) for a, b in zip(history, history[1:]))
    return est, PowerMethodInfo(est, k, restarts, converged, monotone, history)


# --------------------------------------------------------------------------
# phase retrieval


@dataclass(frozen=True)
class FresnelConfig:
    """Near-field holography setup on an ``n x n`` pixel grid.

    Frequencies are ``2 pi fftfreq(n, d=pixel)``; the propagator to the
    effective distance ``D/M`` uses the chirp parameter ``c = D / (M kappa)``.
    """

    n: int = 64
    kappa: float = 1.0
    R: float = 1.0
    D: float = 1.0
    pixel: float = 1.0

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValueError("grid size must be even and >= 2")
        if not (self.kappa > 0 and self.R > 0 and self.D > 0 and self.pixel > 0):
            raise ValueError("kappa, R, D and pixel must be positive")

    @property
    def magnification(self) -> float:
        return (self.R + self.D) / self.R

    @property
    def chirp(self) -> float:
        return self.D / (self.magnification * self.kappa)

    def frequency_sq(self) -> np.ndarray:
        f = 2 * np.pi * np.fft.fftfreq(self.n, d=self.pixel)
        return f[:, None] ** 2 + f[None, :] ** 2


def fresnel_propagate(field: np.ndarray, c: float, xi2: np.ndarray | None = None) -> np.ndarray:
    """Apply ``F^{-1} exp(-i c |xi|^2) F`` to a square complex grid."""
    field = np.asarray(field, dtype=complex)
    if field.ndim != 2 or field.shape[0] != field.shape[1]:
        raise ValueError("field must be a square 2-d grid")
    if c == 0.0:
        return field.copy()
    if xi2 is None:
        xi2 = FresnelConfig(n=field.shape[0]).frequency_sq()
    return np.fft.ifft2(np.exp(-1j * c * xi2) * np.fft.fft2(field))


class PhaseRetrieval:
    """``phi -> |P_{D/M} exp(-i kappa phi)|^2 / M^2`` with Frechet derivative."""

    def __init__(self, cfg: FresnelConfig = FresnelConfig()):
        self.cfg = cfg
        self.in_shape = self.out_shape = (cfg.n, cfg.n)
        self._xi2 = cfg.frequency_sq()
        self._c = cfg.chirp
        self._m2 = cfg.magnification ** 2

    def propagate(self, field, inverse=False):
        return fresnel_propagate(field, -self._c if inverse else self._c, self._xi2)

    def apply(self, phi):
        u = np.exp(-1j * self.cfg.kappa * np.asarray(phi, float))
        return np.abs(self.propagate(u)) ** 2 / self._m2

    __call__ = apply

    def derivative(self, phi) -> LinearOp:
        kappa, m2 = self.cfg.kappa, self._m2
        u = np.exp(-1j * kappa * np.asarray(phi, float))
        pu = self.propagate(u)

        def fwd(h):
            return (2.0 / m2) * np.real(np.conj(pu) * self.propagate(-1j * kappa * h * u))

        def adj(y):
            back = self.propagate(np.asarray(y, float) * pu, inverse=True)
            return (2.0 * kappa / m2) * np.imag(u * np.conj(back))

        return FunctionOp(fwd, adj, self.in_shape, self.out_shape)


def phase_forward(cfg: FresnelConfig, phi: np.ndarray) -> np.ndarray:
    return PhaseRetrieval(cfg).apply(phi)


def phase_derivative(cfg: FresnelConfig, phi: np.ndarray) -> LinearOp:
    return PhaseRetrieval(cfg).derivative(phi)
