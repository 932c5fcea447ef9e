"""Primal-dual iteration in Banach spaces with three step-size schedules.

One step maps ``(x, p, x_hat)`` to::

    p+     = (sigma dg* + J_{Y*})^{-1}(J_{Y*} p + sigma T x_hat)
    x+     = (tau df + J_X)^{-1}(J_X x - tau T^T p+)
    x_hat+ = x+ + theta (x+ - x)

Schedules:

* ``V1``: constant ``sigma, tau`` and ``theta = 1``, requiring
  ``sigma tau ||T||^2 <= C``.
* ``V2``: accelerated, for ``f`` with convexity modulus ``gamma``;
  ``theta_k = (1 + gamma tau_k)^(-1/2)``, ``tau_{k+1} = theta_k tau_k`` and
  ``sigma_{k+1} tau_{k+1} = sigma_0 tau_0``.
* ``V3``: constant steps ``sigma = mu/delta``, ``tau = mu/gamma`` for ``f`` and
  ``g*`` with moduli ``gamma`` and ``delta``; linear rate
  ``omega = (1 + theta)/(2 + mu)``.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .operators import LinearOp, MatrixOp, power_method
from .resolvents import L1, DataFidelity, PowerNorm, PrimalFn, QuadraticData, Zero
from .spaces import Space, WeightedLr, convexity_constant

__all__ = [
    "SaddleProblem",
    "Schedule",
    "StopRule",
    "State",
    "IterateRecord",
    "RunResult",
    "ScheduleError",
    "cp_bs_step",
    "run",
    "run_v1",
    "run_v2",
    "run_v3",
    "misfit",
    "partial_gap",
    "misfit_sup_over_box",
    "v1_bound_factor",
    "v2_bound",
    "v3_omega",
]

DEFAULT_C = 0.96
DIVERGENCE_FACTOR = 1e3


class ScheduleError(ValueError):
    """Step sizes violate the convergence premise of the chosen schedule."""


@dataclass
class SaddleProblem:
    """``min_x max_p <Tx, p> - g*(p) + f(x)`` over ``X x Y*``.

    ``saddle`` is an optional known solution ``(x_bar, p_bar)`` used for
    diagnostics; ``op_norm`` is estimated by the power method when omitted.
    """

    T: LinearOp
    f: PrimalFn
    g: DataFidelity
    X: Space
    Y: Space
    saddle: tuple | None = None
    op_norm: float | None = None

    def __post_init__(self):
        if tuple(self.T.in_shape) != tuple(self.X.shape):
            raise ValueError(f"operator domain {self.T.in_shape} does not match X {self.X.shape}")
        if tuple(self.T.out_shape) != tuple(self.Y.shape):
            raise ValueError(f"operator range {self.T.out_shape} does not match Y {self.Y.shape}")
        if self.f.space != self.X:
            raise ValueError("primal penalty is defined on a different space than X")
        if self.g.space != self.Y:
            raise ValueError("data fidelity is defined on a different space than Y")

    @property
    def Ystar(self) -> Space:
        return self.Y.dual

    def norm(self) -> float:
        if self.op_norm is None:
            self.op_norm = power_method(self.T, self.X, self.Y)
        return self.op_norm

    def lagrangian(self, x, p) -> float:
        return float(np.vdot(self.T.apply(x), p)) - self.g.conj_value(p) + self.f.value(x)

    def convexity_product(self) -> float:
        return convexity_constant(self.X) * convexity_constant(self.Ystar)


@dataclass
class Schedule:
    """Step-size rule; build with :meth:`v1`, :meth:`v2` or :meth:`v3`."""

    variant: str
    sigma: float
    tau: float
    theta: float = 1.0
    gamma: float = 0.0
    delta: float = 0.0
    mu: float = 0.0
    C: float = DEFAULT_C
    diagnostic: bool = False

    @classmethod
    def v1(cls, sigma, tau, C=DEFAULT_C, theta=1.0, diagnostic=False):
        if theta != 1.0 and not diagnostic:
            raise ScheduleError("V1 uses theta = 1; other values need diagnostic=True")
        return cls("V1", float(sigma), float(tau), float(theta), C=float(C), diagnostic=diagnostic)

    @classmethod
    def v2(cls, sigma0, tau0, gamma, C=DEFAULT_C):
        if not gamma > 0:
            raise ScheduleError("V2 needs gamma > 0")
        return cls("V2", float(sigma0), float(tau0), gamma=float(gamma), C=float(C))

    @classmethod
    def v3(cls, gamma, delta, mu, theta=None, C=DEFAULT_C):
        if not (gamma > 0 and delta > 0 and mu > 0):
            raise ScheduleError("V3 needs gamma, delta, mu > 0")
        theta = 1.0 / (1.0 + mu) if theta is None else float(theta)
        return cls("V3", mu / delta, mu / gamma, theta, float(gamma), float(delta), float(mu), float(C))

    @classmethod
    def balanced_v1(cls, op_norm, C=DEFAULT_C, ratio=1.0):
        """V1 with ``sigma tau ||T||^2 = C`` and ``sigma / tau = ratio``."""
        s = math.sqrt(C * ratio) / op_norm
        return cls.v1(s, C / (s * op_norm**2), C)

    @property
    def omega(self) -> float:
        return v3_omega(self.theta, self.mu)

    def validate(self, problem: SaddleProblem):
        if not (self.sigma > 0 and self.tau > 0):
            raise ScheduleError("step sizes must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ScheduleError("theta must lie in [0, 1]")
        if not 0 < self.C <= 1:
            raise ScheduleError("relaxation constant C must lie in (0, 1]")
        L = problem.norm()
        prod = self.sigma * self.tau * L * L
        slack = 1 + 1e-12
        if self.variant in ("V1", "V2") and prod > self.C * slack:
            raise ScheduleError(f"sigma*tau*||T||^2 = {prod:.6g} exceeds C = {self.C:g}")
        if self.variant == "V2" and problem.f.modulus < self.gamma * (1 - 1e-12):
            raise ScheduleError(f"f has convexity modulus {problem.f.modulus:g} < gamma = {self.gamma:g}")
        if self.variant == "V3":
            if problem.f.modulus < self.gamma * (1 - 1e-12) or problem.g.modulus < self.delta * (1 - 1e-12):
                raise ScheduleError("resolvent moduli are smaller than gamma/delta")
            bound = math.sqrt(self.gamma * self.delta) * math.sqrt(self.C) / L
            if self.mu > bound * slack:
                raise ScheduleError(f"mu = {self.mu:.6g} exceeds sqrt(gamma delta C)/||T|| = {bound:.6g}")
            if self.theta < 1.0 / (1.0 + self.mu) * (1 - 1e-12):
                raise ScheduleError("theta must be at least 1/(1 + mu)")

    def steps(self):
        """Yield ``(sigma_k, tau_k, theta_k)`` for ``k = 0, 1, ...``."""
        if self.variant in ("V1", "V3"):
            return itertools.repeat((self.sigma, self.tau, self.theta))
        return self._v2_steps()

    def _v2_steps(self):
        st0 = self.sigma * self.tau
        sigma, tau = self.sigma, self.tau
        while True:
            theta = 1.0 / math.sqrt(1.0 + self.gamma * tau)
            yield sigma, tau, theta
            tau = theta * tau
            # via the product so that sigma_k tau_k stays fixed in floating point
            sigma = st0 / tau


@dataclass
class StopRule:
    """Composite stopping rule.

    Stops at ``max_iters``, when ``||x_k - x_ref||_1 <= tol`` (if a reference is
    supplied), or when the largest change of both iterates drops below
    ``stag_tol`` times their largest entry.
    """

    max_iters: int = 1000
    x_ref: np.ndarray | None = None
    tol: float = 1e-5
    stag_tol: float = 1e-12


@dataclass
class State:
    x: np.ndarray
    p: np.ndarray
    x_hat: np.ndarray
    jx: np.ndarray | None = None
    jp: np.ndarray | None = None


@dataclass
class IterateRecord:
    k: int
    elapsed_s: float
    err_ref: float
    misfit: float
    gap: float
    tau_k: float
    sigma_k: float
    dx: float
    lyapunov: float = math.nan
    x: np.ndarray | None = None
    p: np.ndarray | None = None
    x_hat: np.ndarray | None = None


TRACE_COLUMNS = ("k", "elapsed_s", "err_ref", "misfit", "gap", "tau_k", "sigma_k")


@dataclass
class RunResult:
    x: np.ndarray
    p: np.ndarray
    x_hat: np.ndarray
    iterations: int
    status: str
    schedule: Schedule
    records: list = field(default_factory=list)
    x_erg: np.ndarray | None = None
    p_erg: np.ndarray | None = None
    misfit0: float = math.nan
    lyapunov0: float = math.nan
    op_norm: float = math.nan
    backend: str = "generic"

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def table(self) -> dict:
        return {c: self.column(c) for c in TRACE_COLUMNS}


# --------------------------------------------------------------------------
# diagnostics


def misfit(problem: SaddleProblem, x, p, reference, sigma, tau) -> float:
    """``B_{Y*}(p_bar, p)/sigma + B_X(x_bar, x)/tau``."""
    xb, pb = reference
    return problem.Ystar.bregman(pb, p) / sigma + problem.X.bregman(xb, x) / tau


def _as_box(box, shape):
    lo, hi = box
    return (np.broadcast_to(np.asarray(lo, float), shape), np.broadcast_to(np.asarray(hi, float), shape))


def partial_gap(problem: SaddleProblem, x, p, box_x, box_p) -> float:
    """Partial primal-dual gap over the boxes ``box_x`` in ``X`` and ``box_p`` in ``Y*``.

    The inner problems are solved exactly with the separable box machinery of
    the resolvent catalog; unsupported penalties raise ``NotImplementedError``.
    """
    lx, ux = _as_box(box_x, problem.X.shape)
    lp, up = _as_box(box_p, problem.Ystar.shape)
    upper = problem.g.box_max(problem.T.apply(x), lp, up) + problem.f.value(x)
    _, fmin = problem.f.box_min(problem.T.adjoint(p), lx, ux)
    lower = fmin - problem.g.conj_value(p)
    return upper - lower


def _box_vertices_max(fun, lo, hi, limit=2**20):
    lo, hi = lo.ravel(), hi.ravel()
    free = np.flatnonzero(lo != hi)
    if 2 ** free.size > limit:
        raise ValueError("box has too many vertices for an exhaustive supremum")
    best = -math.inf
    base = lo.copy()
    for bits in itertools.product((0, 1), repeat=free.size):
        v = base.copy()
        sel = np.array(bits, dtype=bool)
        v[free] = np.where(sel, hi[free], lo[free])
        best = max(best, fun(v))
    return best


def misfit_sup_over_box(problem: SaddleProblem, x0, p0, sigma, tau, box_x, box_p) -> float:
    """``sup`` of ``B_{Y*}(q, p0)/sigma + B_X(u, x0)/tau`` over the boxes.

    Both terms are convex in the free point, so the supremum sits at a vertex.
    """
    lx, ux = _as_box(box_x, problem.X.shape)
    lp, up = _as_box(box_p, problem.Ystar.shape)
    X, Ys = problem.X, problem.Ystar
    sx = _box_vertices_max(lambda v: X.bregman(v.reshape(X.shape), x0), lx, ux)
    sp = _box_vertices_max(lambda v: Ys.bregman(v.reshape(Ys.shape), p0), lp, up)
    return sp / sigma + sx / tau


def v1_bound_factor(op_norm, sigma, tau, C) -> float:
    """``(1 - ||T||^2 sigma tau / C)^{-1}``."""
    q = op_norm**2 * sigma * tau / C
    if q >= 1:
        return math.inf
    return 1.0 / (1.0 - q)


def v2_bound(N, bx0, bp0, gamma, sigma0, tau0, eps=1.0) -> float:
    """Right side of the accelerated error bound for ``B_X(x_bar, x_N)``."""
    return (4 + 4 * eps) / N**2 * (bx0 / (gamma**2 * tau0**2) + bp0 / (gamma**2 * sigma0 * tau0))


def v3_omega(theta, mu) -> float:
    return (1.0 + theta) / (2.0 + mu)


# --------------------------------------------------------------------------
# iteration


def _initial_state(problem, x0, p0):
    x = np.zeros(problem.X.shape) if x0 is None else np.array(problem.X.check(x0), dtype=float)
    p = np.zeros(problem.Ystar.shape) if p0 is None else np.array(problem.Ystar.check(p0), dtype=float)
    return State(x, p, x.copy())


def cp_bs_step(problem: SaddleProblem, state: State, sigma, tau, theta) -> State:
    """One iteration; reuses ``state.jx``/``state.jp`` when present."""
    if not (sigma > 0 and tau > 0):
        raise ScheduleError("step sizes must be positive")
    T = problem.T
    jp = state.jp if state.jp is not None else problem.Ystar.duality_map(state.p)
    jx = state.jx if state.jx is not None else problem.X.duality_map(state.x)
    p_new = problem.g.gstar_resolvent(sigma, jp + sigma * T.apply(state.x_hat))
    x_new = problem.f.resolvent(tau, jx - tau * T.adjoint(p_new))
    x_hat = x_new + theta * (x_new - state.x)
    return State(x_new, p_new, x_hat, problem.X.duality_map(x_new), problem.Ystar.duality_map(p_new))


def _lyapunov(problem, sched, x, p):
    xb, pb = problem.saddle
    om = sched.omega
    return (1 - om) * sched.delta * problem.Ystar.bregman(pb, p) + sched.gamma * problem.X.bregman(xb, x)


def _fused_args(problem: SaddleProblem, sched: Schedule):
    """Arguments for the compiled dense loop, or ``None`` if it does not apply."""
    T, X, Y, f, g = problem.T, problem.X, problem.Y, problem.f, problem.g
    if sched.variant != "V1" or not isinstance(T, MatrixOp):
        return None
    if not (isinstance(X, WeightedLr) and isinstance(Y, WeightedLr) and Y.r == 2.0):
        return None
    if type(g) is not QuadraticData:
        return None
    if type(f) is Zero:
        kind, scale = _kernels.F_ZERO, 1.0
    elif type(f) is L1:
        kind, scale = _kernels.F_L1, f.scale
    elif type(f) is PowerNorm and f.r == 2.0:
        kind, scale = _kernels.F_POWER2, f.scale
    else:
        return None
    return dict(T=T.matrix, y0=g.y0, wy=Y.weights, rx=X.r, wx=X.weights, f_kind=kind, f_scale=scale)


_STATUS = {
    _kernels.STATUS_MAXITER: "max_iters",
    _kernels.STATUS_TOL: "tolerance",
    _kernels.STATUS_STAGNATION: "stagnation",
    _kernels.STATUS_DIVERGED: "diverged",
}


def run(problem: SaddleProblem, schedule: Schedule, stop: StopRule | None = None, x0=None, p0=None,
        record: bool = True, gap_box=None, gap_every: int = 1, keep_iterates: bool = False,
        timing: bool = False, backend: str = "auto") -> RunResult:
    """Run the iteration under ``schedule`` until ``stop`` triggers.

    Parameters
    ----------
    record : bool
        Keep one :class:`IterateRecord` per iteration. Without records and with
        ``backend="auto"``, eligible dense problems run in the compiled loop.
    gap_box : tuple, optional
        ``((lo_x, hi_x), (lo_p, hi_p))``; enables the partial gap of the
        ergodic means every ``gap_every`` iterations.
    timing : bool
        Record wall-clock time. Off by default so traces are reproducible.
    backend : {"auto", "generic", "fused"}
    """
    stop = stop or StopRule()
    schedule.validate(problem)
    state = _initial_state(problem, x0, p0)
    L = problem.norm()

    fused = _fused_args(problem, schedule) if backend in ("auto", "fused") else None
    if backend == "fused" and fused is None:
        raise ValueError("problem is not eligible for the fused dense loop")
    if fused is not None and (not record or backend == "fused") and problem.saddle is None and gap_box is None:
        x, p, k, status, err = _kernels.cpbs_dense_run(
            **fused, sigma=schedule.sigma, tau=schedule.tau, theta=schedule.theta,
            x0=state.x, p0=state.p, max_iter=int(stop.max_iters), x_ref=stop.x_ref,
            tol=float(stop.tol), stag_tol=float(stop.stag_tol))
        rec = IterateRecord(k, math.nan, err, math.nan, math.nan, schedule.tau, schedule.sigma, math.nan)
        return RunResult(x, p, x, k, _STATUS[status], schedule, [rec], op_norm=L, backend=_kernels.BACKEND)

    t0 = time.perf_counter()
    ref = problem.saddle
    m0 = misfit(problem, state.x, state.p, ref, schedule.sigma, schedule.tau) if ref is not None else math.nan
    ly0 = _lyapunov(problem, schedule, state.x, state.p) if (ref is not None and schedule.variant == "V3") else math.nan
    err0 = float(np.sum(np.abs(state.x - stop.x_ref))) if stop.x_ref is not None else math.nan
    x_sum = np.zeros_like(state.x)
    p_sum = np.zeros_like(state.p)
    records = []
    status = "max_iters"
    k = 0
    for k, (sigma, tau, theta) in zip(range(1, int(stop.max_iters) + 1), schedule.steps()):
        prev = state
        state = cp_bs_step(problem, prev, sigma, tau, theta)
        x_sum += state.x
        p_sum += state.p
        dx = float(np.max(np.abs(state.x - prev.x)))
        dp = float(np.max(np.abs(state.p - prev.p)))
        if not (math.isfinite(dx) and math.isfinite(dp)):
            status = "diverged"
        err = float(np.sum(np.abs(state.x - stop.x_ref))) if stop.x_ref is not None else math.nan
        # misfit uses the steps of the next iteration, matching Delta_k
        if ref is not None and status != "diverged":
            if schedule.variant == "V2":
                sig_k, tau_k = schedule.sigma * schedule.tau / (tau * theta), tau * theta
            else:
                sig_k, tau_k = sigma, tau
            mf = misfit(problem, state.x, state.p, ref, sig_k, tau_k)
        else:
            mf = math.nan
        gap = math.nan
        if gap_box is not None and (k % gap_every == 0) and status != "diverged":
            gap = partial_gap(problem, x_sum / k, p_sum / k, gap_box[0], gap_box[1])
        ly = _lyapunov(problem, schedule, state.x, state.p) if not math.isnan(ly0) else math.nan
        if record:
            rec = IterateRecord(k, time.perf_counter() - t0 if timing else math.nan, err, mf, gap,
                                tau, sigma, dx, ly)
            if keep_iterates:
                rec.x, rec.p, rec.x_hat = state.x, state.p, state.x_hat
            records.append(rec)
        if status == "diverged":
            break
        if (m0 > 0 and mf > DIVERGENCE_FACTOR * m0) or (err0 > 0 and err > DIVERGENCE_FACTOR * err0):
            status = "diverged"
            break
        if stop.x_ref is not None and err <= stop.tol:
            status = "tolerance"
            break
        if stop.stag_tol > 0:
            xm = max(float(np.max(np.abs(state.x))), 1e-300)
            pm = max(float(np.max(np.abs(state.p))), 1e-300)
            if dx <= stop.stag_tol * xm and dp <= stop.stag_tol * pm:
                status = "stagnation"
                break
    if not record:
        records.append(IterateRecord(k, time.perf_counter() - t0 if timing else math.nan, err if k else err0,
                                     math.nan, math.nan, schedule.tau, schedule.sigma, math.nan))
    n = max(k, 1)
    return RunResult(state.x, state.p, state.x_hat, k, status, schedule, records,
                     x_sum / n, p_sum / n, m0, ly0, L)


def run_v1(problem, sigma, tau, C=DEFAULT_C, stop=None, **kw) -> RunResult:
    return run(problem, Schedule.v1(sigma, tau, C), stop, **kw)


def run_v2(problem, tau0, sigma0, gamma, C=DEFAULT_C, stop=None, **kw) -> RunResult:
    return run(problem, Schedule.v2(sigma0, tau0, gamma, C), stop, **kw)


def run_v3(problem, gamma, delta, mu, theta=None, C=DEFAULT_C, stop=None, **kw) -> RunResult:
    return run(problem, Schedule.v3(gamma, delta, mu, theta, C), stop, **kw)
