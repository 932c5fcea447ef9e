"""Tikhonov solves and the iteratively regularized Newton method (IRNM)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import LinearOp, power_method
from .resolvents import L1, KLData, PowerNorm, QuadraticData
from .solver import DEFAULT_C, RunResult, SaddleProblem, Schedule, StopRule, run
from .spaces import Space, WeightedLr

__all__ = [
    "TikhonovSpec",
    "TikhonovResult",
    "tikhonov_problem",
    "tikhonov_solve",
    "initial_dual",
    "IrnmSpec",
    "IrnmStep",
    "IrnmResult",
    "irnm_run",
    "kl_divergence",
]


@dataclass
class TikhonovSpec:
    """``argmin_x S(y_obs; T x) + alpha R(x)``.

    ``penalty`` is ``"power_norm"`` (``R = 1/r ||x||_X^r``, ``r = penalty_r``)
    or ``"l1"``; ``fidelity`` is ``"quadratic"`` or ``"kl"``. ``shift`` replaces
    ``T x`` by ``T x + shift`` in the data term.
    """

    T: LinearOp
    y_obs: np.ndarray
    X: Space
    Y: Space
    alpha: float
    penalty: str = "l1"
    penalty_r: float = 2.0
    fidelity: str = "quadratic"
    shift: np.ndarray | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.penalty not in ("l1", "power_norm"):
            raise ValueError(f"unsupported penalty {self.penalty!r}")
        if self.fidelity not in ("quadratic", "kl"):
            raise ValueError(f"unsupported fidelity {self.fidelity!r}")


@dataclass
class TikhonovResult:
    x: np.ndarray
    p: np.ndarray
    run: RunResult
    problem: SaddleProblem


def tikhonov_problem(spec: TikhonovSpec, op_norm: float | None = None, saddle=None) -> SaddleProblem:
    if spec.penalty == "l1":
        f = L1(spec.X, spec.alpha)
    else:
        f = PowerNorm(spec.X, spec.penalty_r, spec.alpha)
    g = QuadraticData(spec.Y, spec.y_obs) if spec.fidelity == "quadratic" else KLData(spec.Y, spec.y_obs)
    if spec.shift is not None:
        g = g.shifted(spec.shift)
    return SaddleProblem(spec.T, f, g, spec.X, spec.Y, saddle=saddle, op_norm=op_norm)


def initial_dual(problem: SaddleProblem, x0) -> np.ndarray:
    """Dual start with ``T x0`` in the subdifferential of ``g*`` at ``p0``, i.e. ``p0`` in ``dg(T x0)``.

    Entries where the gradient is not finite (outside the KL domain) fall back to 0.
    """
    p0 = np.asarray(problem.g.gradient(problem.T.apply(x0)), dtype=float)
    return np.where(np.isfinite(p0), p0, 0.0)


def tikhonov_solve(spec: TikhonovSpec, schedule: Schedule | None = None, stop: StopRule | None = None,
                   x0=None, p0=None, op_norm: float | None = None, **run_kw) -> TikhonovResult:
    """Assemble the saddle problem and run the solver.

    Defaults: ``x0 = 0``, ``p0`` from :func:`initial_dual`, and a V1 schedule with
    ``sigma = tau = sqrt(C)/||T||``, where ``C`` is the default relaxation
    capped at the product of the convexity constants of ``X`` and ``Y*``.
    """
    problem = tikhonov_problem(spec, op_norm)
    x0 = np.zeros(spec.X.shape) if x0 is None else np.asarray(x0, float)
    if p0 is None:
        p0 = initial_dual(problem, x0)
    if schedule is None:
        schedule = Schedule.balanced_v1(problem.norm(), min(DEFAULT_C, problem.convexity_product()))
    res = run(problem, schedule, stop, x0=x0, p0=p0, **run_kw)
    return TikhonovResult(res.x, res.p, res, problem)


def kl_divergence(y_obs, y) -> float:
    """Poisson negative log-likelihood ``sum y - y_obs ln y`` (``0 ln 0 = 0``)."""
    y_obs = np.asarray(y_obs, float)
    y = np.asarray(y, float)
    pos = y_obs > 0
    if np.any(y[pos] <= 0) or np.any(y < 0):
        return math.inf
    return float(np.sum(y) - np.sum(y_obs[pos] * np.log(y[pos])))


@dataclass
class IrnmSpec:
    """Settings for ``x_{n+1} = argmin S(y; F(x_n) + F'[x_n](x - x_n)) + alpha_n R(x)``.

    ``op`` needs ``apply(x)`` and ``derivative(x) -> LinearOp``. The penalty is
    ``R = 1/2 ||x||_X^2``. Each linearized problem uses ``Y = l^2_W`` with
    ``W = 1/(F(x_n) + epsilon)``.
    """

    op: object
    y_obs: np.ndarray
    X: Space
    alpha0: float = 1.0
    rho: float = 0.5
    newton_steps: int = 2
    epsilon: float = 0.1
    fidelity: str = "kl"
    inner_iters: int = 300
    C: float = DEFAULT_C
    step_ratio: float = 1.0
    x0: np.ndarray | None = None
    weighted: bool = True
    record: bool = False

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.newton_steps < 1:
            raise ValueError("newton_steps must be >= 1")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.weighted and self.epsilon == 0:
            raise ValueError("weights 1/(F(x) + epsilon) need epsilon > 0")


@dataclass
class IrnmStep:
    n: int
    alpha: float
    op_norm: float
    x: np.ndarray
    data_misfit: float
    run: RunResult


@dataclass
class IrnmResult:
    x: np.ndarray
    steps: list = field(default_factory=list)
    initial_misfit: float = math.nan
    status: str = "ok"

    @property
    def misfits(self) -> list:
        return [self.initial_misfit] + [s.data_misfit for s in self.steps]

    @property
    def alphas(self) -> list:
        return [s.alpha for s in self.steps]


def _data_misfit(spec: IrnmSpec, F):
    if spec.fidelity == "kl":
        return kl_divergence(spec.y_obs, F)
    return 0.5 * float(np.sum((F - spec.y_obs) ** 2))


def irnm_run(spec: IrnmSpec, stop_tol: float = 0.0) -> IrnmResult:
    """Run the Newton loop; an inner divergence ends it with partial results."""
    x = np.zeros(spec.X.shape) if spec.x0 is None else np.array(spec.x0, dtype=float)
    F = spec.op.apply(x)
    out = IrnmResult(x, initial_misfit=_data_misfit(spec, F))
    for n in range(spec.newton_steps):
        alpha = spec.alpha0 * spec.rho**n
        weights = 1.0 / (F + spec.epsilon) if spec.weighted else np.ones_like(F)
        Y = WeightedLr(2.0, weights)
        A = spec.op.derivative(x)
        L = power_method(A, spec.X, Y, iters=200, tol=1e-6)
        tspec = TikhonovSpec(A, spec.y_obs, spec.X, Y, alpha, penalty="power_norm", penalty_r=2.0,
                             fidelity=spec.fidelity, shift=F - A.apply(x))
        s = math.sqrt(spec.C * spec.step_ratio) / L
        sched = Schedule.v1(s, spec.C / (s * L * L), spec.C)
        res = tikhonov_solve(tspec, sched, StopRule(spec.inner_iters, stag_tol=stop_tol), x0=x,
                             op_norm=L, record=spec.record)
        if res.run.diverged:
            out.status = "diverged"
            out.steps.append(IrnmStep(n, alpha, L, res.x, math.nan, res.run))
            break
        x = res.x
        F = spec.op.apply(x)
        out.steps.append(IrnmStep(n, alpha, L, x, _data_misfit(spec, F), res.run))
        out.x = x
    return out
