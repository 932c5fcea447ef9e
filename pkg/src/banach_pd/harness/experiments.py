"""Experiment drivers behind the CLI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from ..irnm import IrnmSpec, TikhonovSpec, initial_dual, irnm_run, kl_divergence, tikhonov_problem
from ..operators import FresnelConfig, MatrixOp, PhaseRetrieval, conv_grids, conv_operator, power_method
from ..resolvents import PowerNorm, QuadraticData
from ..solver import (DEFAULT_C, RunResult, SaddleProblem, Schedule, ScheduleError, StopRule, run)
from ..spaces import SobolevPeriodic, WeightedLr
from . import artifacts
from .config import ExperimentConfig
from .noise import make_noise, spawn_seeds
from .reference import reference_minimizer

#: ||T|| implied by the nominal l2 step pair (sigma, tau) = (0.0023, 0.279)
#: under sigma tau ||T||^2 = 1; nominal sigmas are rescaled by it.
NOMINAL_OP_NORM = 1.0 / math.sqrt(0.0023 * 0.279)
NOISE_MODEL = "gaussian: y + level*||y||_2*xi/||xi||_2, xi iid N(0,1)"
REFERENCE_C = 0.999
REFERENCE_STAG = 1e-13


@dataclass
class ExperimentOutcome:
    """What the CLI needs: a status, files written and a short summary."""

    status: str
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    result: object = None

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"


# --------------------------------------------------------------------------
# deconvolution

@dataclass
class DeconvSetup:
    T: MatrixOp
    s: np.ndarray
    t: np.ndarray
    x_true: np.ndarray
    y_true: np.ndarray
    y_obs: np.ndarray


def spike_signal(s, spikes) -> np.ndarray:
    """Spikes placed at the grid points nearest the requested positions."""
    x = np.zeros(len(s))
    for pos, amp in spikes:
        x[int(np.argmin(np.abs(s - pos)))] = amp
    return x


def deconv_setup(dcfg, seed) -> DeconvSetup:
    T = conv_operator(dcfg.kernel_decay, dcfg.n_x, dcfg.n_y, quadrature=dcfg.quadrature)
    s, t = conv_grids(dcfg.n_x, dcfg.n_y)
    x_true = spike_signal(s, dcfg.spikes)
    y_true = T.apply(x_true)
    y_obs = make_noise(y_true, dcfg.noise_level, seed)
    return DeconvSetup(T, s, t, x_true, y_true, y_obs)


def scale_sigma(sigma_nominal: float, op_norm_l2: float) -> float:
    return sigma_nominal * NOMINAL_OP_NORM / op_norm_l2


def default_C(r: float, sigma: float, op_norm: float, C_hilbert_offset=2.0**-7, C_banach=0.93) -> float:
    """Product bound used when only sigma is given: mid-window choices for each space."""
    if r == 2.0:
        return 1.0 - C_hilbert_offset * sigma * op_norm**2
    return C_banach


def deconv_problem(setup: DeconvSetup, X, alpha, penalty="l1", op_norm=None) -> SaddleProblem:
    Y = WeightedLr(2.0, setup.y_obs.size)
    spec = TikhonovSpec(setup.T, setup.y_obs, X, Y, alpha, penalty=penalty, penalty_r=2.0)
    return tikhonov_problem(spec, op_norm)


def deconv_reference(setup: DeconvSetup, X, alpha, penalty, budget, op_norm_l2=None):
    """Reference minimizer. The l1-penalized minimizer does not depend on X, so it is computed in l2."""
    Xref = WeightedLr(2.0, setup.x_true.size) if penalty == "l1" else X
    pr = deconv_problem(setup, Xref, alpha, penalty, op_norm_l2 if penalty == "l1" else None)
    x0 = np.zeros(Xref.shape)
    return reference_minimizer(pr, budget, x0=x0, p0=initial_dual(pr, x0), C=REFERENCE_C, stag_tol=REFERENCE_STAG)


def build_schedule(scfg, op_norm, C_default=DEFAULT_C, C_rule=None) -> Schedule:
    """Schedule from solver settings; missing steps are derived from the product bound.

    ``C_default`` applies when no ``C`` is configured; ``C_rule(sigma)`` replaces
    it when only ``sigma`` is given.
    """
    v = scfg.variant
    if v == "V3":
        C = scfg.C if scfg.C is not None else C_default
        mu = scfg.mu if scfg.mu is not None else math.sqrt(scfg.gamma * scfg.delta * C) / op_norm
        return Schedule.v3(scfg.gamma, scfg.delta, mu, scfg.theta, C)
    sigma = scfg.sigma
    if sigma is None and scfg.tau is None:
        C = scfg.C if scfg.C is not None else C_default
        sched = Schedule.balanced_v1(op_norm, C)
        sigma, tau = sched.sigma, sched.tau
    elif sigma is None:
        C = scfg.C if scfg.C is not None else C_default
        tau = scfg.tau
        sigma = C / (tau * op_norm**2)
    else:
        C = scfg.C if scfg.C is not None else (C_rule(sigma) if C_rule else C_default)
        tau = scfg.tau if scfg.tau is not None else C / (sigma * op_norm**2)
    if v == "V2":
        return Schedule.v2(sigma, tau, scfg.gamma, C)
    theta = 1.0 if scfg.theta is None else scfg.theta
    return Schedule.v1(sigma, tau, C, theta=theta, diagnostic=theta != 1.0)


def deconv_experiment(cfg: ExperimentConfig, out: Path) -> ExperimentOutcome:
    d, scfg = cfg.deconv, cfg.solver
    setup = deconv_setup(d, cfg.seed)
    X = WeightedLr(d.r, d.n_x)
    Y = WeightedLr(2.0, d.n_y)
    L2 = power_method(setup.T, WeightedLr(2.0, d.n_x), Y, tol=1e-12, iters=5000)
    L = L2 if d.r == 2.0 else power_method(setup.T, X, Y, tol=1e-12, iters=5000)
    problem = deconv_problem(setup, X, d.alpha, d.penalty, L)

    sigma_in = scfg.sigma if scfg.sigma is not None else d.sigma_nominal
    sigma = scale_sigma(sigma_in, L2) if scfg.sigma_scaling == "scaled" else sigma_in
    scfg_eff = type(scfg)(**{**vars(scfg), "sigma": sigma})
    sched = build_schedule(scfg_eff, L, C_rule=lambda s: default_C(d.r, s, L, cfg.comparison.C_hilbert_offset,
                                                                      cfg.comparison.C_banach))
    ref = deconv_reference(setup, X, d.alpha, d.penalty, d.reference_budget, L2)
    tol = scfg.tol if scfg.tol is not None else 1e-5
    x0 = np.zeros(d.n_x)
    res = run(problem, sched, StopRule(scfg.max_iters, x_ref=ref.x, tol=tol, stag_tol=0.0),
              x0=x0, p0=initial_dual(problem, x0), timing=cfg.output.timing)
    out.mkdir(parents=True, exist_ok=True)
    files = [artifacts.write_trace(out / "trace.csv", res)]
    files.append(artifacts.write_plot_script(out / "plot_trace.py", "trace.csv", ys=("err_ref",)))
    if cfg.output.dump_solution:
        files.append(artifacts.write_vector(out / "x.csv", res.x))
        files.append(artifacts.write_vector(out / "x_true.csv", setup.x_true))
    summary = {
        "iterations": res.iterations, "termination": res.status,
        "op_norm": L, "op_norm_l2": L2, "sigma": sched.sigma, "tau": sched.tau, "C_used": sched.C,
        "theta": sched.theta, "variant": sched.variant, "sigma_input": sigma_in,
        "sigma_scaling_factor": NOMINAL_OP_NORM / L2 if scfg.sigma_scaling == "scaled" else 1.0,
        "final_err_l1": res.records[-1].err_ref if res.records else math.nan, "tol": tol,
        "reference_iterations": ref.iterations, "reference_from_cache": ref.from_cache,
        "noise_model": NOISE_MODEL, "stagnation_guard": "off (runs stop on the reference distance)",
    }
    files.append(artifacts.write_meta(out / "meta.json", cfg.to_dict(), cfg.seed, experiment="deconv", **summary))
    return ExperimentOutcome(res.status, files, summary, res)


def comparison_experiment(cfg: ExperimentConfig, out: Path | None = None, progress=None) -> ExperimentOutcome:
    """Iterations to reach ``||x_k - x_ref||_1 <= tol`` per (space, sigma) cell over seeded repetitions.

    Each repetition draws its noise from an independent child seed; the
    summary reports median and mean per cell and whether the median for the
    Banach space is strictly below the l2 median for every sigma.
    """
    d, t = cfg.deconv, cfg.comparison
    tol = cfg.solver.tol if cfg.solver.tol is not None else 1e-5
    T = conv_operator(d.kernel_decay, d.n_x, d.n_y, quadrature=d.quadrature)
    Y = WeightedLr(2.0, d.n_y)
    spaces = {r: WeightedLr(r, d.n_x) for r in t.r_values}
    norms = {r: power_method(T, X, Y, tol=1e-12, iters=5000) for r, X in spaces.items()}
    L2 = norms[2.0] if 2.0 in norms else power_method(T, WeightedLr(2.0, d.n_x), Y, tol=1e-12, iters=5000)
    counts = {(r, s): [] for s in t.sigmas for r in t.r_values}
    rows = []
    for rep, child in enumerate(spawn_seeds(cfg.seed, t.repetitions)):
        setup = deconv_setup(d, child)
        ref = deconv_reference(setup, spaces.get(2.0, WeightedLr(2.0, d.n_x)), d.alpha, d.penalty,
                               d.reference_budget, L2)
        for s_nom in t.sigmas:
            sigma = scale_sigma(s_nom, L2)
            for r, X in spaces.items():
                L = norms[r]
                C = default_C(r, sigma, L, t.C_hilbert_offset, t.C_banach)
                pr = deconv_problem(setup, X, d.alpha, d.penalty, L)
                x0 = np.zeros(d.n_x)
                res = run(pr, Schedule.v1(sigma, C / (sigma * L * L), C),
                          StopRule(t.max_iters, x_ref=ref.x, tol=tol, stag_tol=0.0),
                          x0=x0, p0=initial_dual(pr, x0), record=False)
                n_it = res.iterations if res.status == "tolerance" else math.inf
                counts[(r, s_nom)].append(n_it)
                rows.append((rep, r, s_nom, sigma, C / (sigma * L * L), C, n_it))
        if progress:
            progress(rep)
    cells = []
    for (r, s_nom), v in counts.items():
        a = np.array(v, dtype=float)
        cells.append({"r": r, "sigma_nominal": s_nom, "median": float(np.median(a)),
                      "mean": float(np.mean(a)), "converged": int(np.sum(np.isfinite(a)))})
    banach = [r for r in t.r_values if r != 2.0]
    ordering = {}
    if 2.0 in t.r_values:
        for s_nom in t.sigmas:
            m2 = float(np.median(counts[(2.0, s_nom)]))
            ordering[str(s_nom)] = all(float(np.median(counts[(r, s_nom)])) < m2 for r in banach)
    summary = {"cells": cells, "ordering_banach_below_l2": ordering, "op_norms": {str(r): L for r, L in norms.items()},
               "repetitions": t.repetitions, "tol": tol, "noise_model": NOISE_MODEL}
    files = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        files.append(artifacts.write_csv(out / "comparison_runs.csv",
                                         ("rep", "r", "sigma_nominal", "sigma", "tau", "C", "iterations"), rows))
        files.append(artifacts.write_csv(out / "comparison_summary.csv", ("r", "sigma_nominal", "median", "mean", "converged"),
                                         [(c["r"], c["sigma_nominal"], c["median"], c["mean"], c["converged"])
                                          for c in cells]))
        files.append(artifacts.write_meta(out / "meta.json", cfg.to_dict(), cfg.seed, experiment="comparison", **summary))
    status = "ok" if ordering and all(ordering.values()) else "ordering_failed"
    return ExperimentOutcome(status, files, summary, counts)


# --------------------------------------------------------------------------
# quadratic

def quadratic_data(qcfg, seed):
    """``T``, ``y0`` for the quadratic problem; ``n = m = 1`` gives ``T = 1``, ``y0 = qcfg.y0``."""
    if qcfg.n == 1 and qcfg.m == 1:
        return np.array([[1.0]]), np.array([qcfg.y0])
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((qcfg.m, qcfg.n)) / math.sqrt(qcfg.m)
    y0 = rng.standard_normal(qcfg.m)
    return T, y0


def quadratic_saddle(T, X, alpha, y0, tol=1e-15):
    """Saddle point of ``alpha/2 ||x||_X^2 + 1/2 ||T x - y0||_2^2``.

    Solves the optimality condition ``alpha J_X(x) + T^T (T x - y0) = 0`` by
    quasi-Newton minimization followed by a root polish; ``p = T x - y0``.
    """
    T = np.asarray(T, float)
    y0 = np.asarray(y0, float)

    def obj(x):
        r = T @ x - y0
        return 0.5 * alpha * X.norm(x) ** 2 + 0.5 * r @ r, alpha * X.duality_map(x) + T.T @ r

    x = np.linalg.lstsq(T.T @ T + alpha * np.eye(T.shape[1]), T.T @ y0, rcond=None)[0]
    x = optimize.minimize(obj, x, jac=True, method="BFGS", options={"gtol": 1e-14, "maxiter": 10_000}).x
    if X.r != 2.0:
        sol = optimize.root(lambda z: obj(z)[1], x, method="hybr", tol=tol)
        if np.linalg.norm(obj(sol.x)[1]) <= np.linalg.norm(obj(x)[1]):
            x = sol.x
    return x, T @ x - y0


def quadratic_problem(qcfg, seed):
    T, y0 = quadratic_data(qcfg, seed)
    X = WeightedLr(qcfg.r, T.shape[1])
    Y = WeightedLr(2.0, T.shape[0])
    xbar, pbar = quadratic_saddle(T, X, qcfg.alpha, y0)
    return SaddleProblem(MatrixOp(T), PowerNorm(X, 2.0, qcfg.alpha), QuadraticData(Y, y0), X, Y,
                         saddle=(xbar, pbar))


def quadratic_experiment(cfg: ExperimentConfig, out: Path) -> ExperimentOutcome:
    q, scfg = cfg.quadratic, cfg.solver
    problem = quadratic_problem(q, cfg.seed)
    L = problem.norm()
    sched = build_schedule(scfg, L, C_default=min(DEFAULT_C, problem.convexity_product()))
    tol = scfg.tol if scfg.tol is not None else 1e-12
    xbar = problem.saddle[0]
    res = run(problem, sched, StopRule(scfg.max_iters, x_ref=xbar, tol=tol, stag_tol=scfg.stag_tol),
              timing=cfg.output.timing)
    out.mkdir(parents=True, exist_ok=True)
    files = [artifacts.write_trace(out / "trace.csv", res),
             artifacts.write_plot_script(out / "plot_trace.py", "trace.csv")]
    if cfg.output.dump_solution:
        files.append(artifacts.write_vector(out / "x.csv", res.x))
    final_err = float(np.max(np.abs(res.x - xbar)))
    summary = {"iterations": res.iterations, "termination": res.status, "op_norm": L, "sigma": sched.sigma,
               "tau": sched.tau, "theta": sched.theta, "C_used": sched.C, "variant": sched.variant,
               "final_error_max": final_err, "x_bar": xbar, "p_bar": problem.saddle[1], "tol": tol}
    files.append(artifacts.write_meta(out / "meta.json", cfg.to_dict(), cfg.seed, experiment="quadratic", **summary))
    return ExperimentOutcome(res.status, files, summary, res)


# --------------------------------------------------------------------------
# phase retrieval

def phase_phantom(n: int) -> np.ndarray:
    """Disk of height 0.6 plus a rectangle of height 0.4 on an ``n x n`` grid."""
    g = (np.arange(n) - n / 2) * (64.0 / n)
    a, b = np.meshgrid(g, g, indexing="ij")
    disk = np.where((a + 8) ** 2 + (b - 6) ** 2 < 12**2, 0.6, 0.0)
    rect = np.where((np.abs(a - 12) < 6) & (np.abs(b + 10) < 9), 0.4, 0.0)
    return disk + rect


def phase_setup(pcfg, seed):
    op = PhaseRetrieval(FresnelConfig(n=pcfg.n, kappa=pcfg.kappa, R=pcfg.R, D=pcfg.D))
    phi = phase_phantom(pcfg.n)
    y = make_noise(op.apply(phi), 0.0, seed, mode="poisson", scale=pcfg.photons)
    return op, phi, y


def phase_experiment(cfg: ExperimentConfig, out: Path) -> ExperimentOutcome:
    p = cfg.phase
    op, phi, y = phase_setup(p, cfg.seed)
    X = SobolevPeriodic(p.r, p.s, (p.n, p.n))
    spec = IrnmSpec(op, y, X, alpha0=p.alpha0, rho=p.rho, newton_steps=p.newton_steps, epsilon=p.epsilon,
                    inner_iters=p.inner_iters,
                    C=p.C, record=True)
    res = irnm_run(spec)
    out.mkdir(parents=True, exist_ok=True)
    newton_rows = [(s.n, s.alpha, s.op_norm, s.data_misfit, s.run.iterations) for s in res.steps]
    files = [artifacts.write_csv(out / "newton.csv", ("n", "alpha", "op_norm", "kl_misfit", "inner_iterations"),
                                 newton_rows)]
    trace_rows, offset = [], 0
    for s in res.steps:
        trace_rows.extend(artifacts.trace_rows(s.run, offset, extra=(s.n,)))
        offset += s.run.iterations
    files.append(artifacts.write_csv(out / "trace.csv", ("k", "elapsed_s", "err_ref", "misfit", "gap", "tau_k",
                                                          "sigma_k", "newton_step"), trace_rows))
    files.append(artifacts.write_plot_script(out / "plot_newton.py", "newton.csv", x="n", ys=("kl_misfit",)))
    if cfg.output.dump_solution:
        files.append(artifacts.write_vector(out / "phi.csv", res.x))
    misfits = res.misfits
    summary = {"termination": res.status, "kl_misfits": misfits,
               "kl_strictly_decreasing": bool(all(b < a for a, b in zip(misfits, misfits[1:]))),
               "kl_true_phase": kl_divergence(y, op.apply(phi)),
               "alphas": res.alphas, "op_norms": [s.op_norm for s in res.steps],
               "defaults_note": "alpha_n = alpha0*rho**n and the inner iteration budget are package defaults",
               "noise_model": f"poisson with photon scale {p.photons:g}"}
    files.append(artifacts.write_meta(out / "meta.json", cfg.to_dict(), cfg.seed, experiment="phase", **summary))
    status = "diverged" if res.status == "diverged" else "ok"
    return ExperimentOutcome(status, files, summary, res)


# --------------------------------------------------------------------------
# operator norm

def opnorm_experiment(cfg: ExperimentConfig, out: Path) -> ExperimentOutcome:
    d = cfg.deconv
    T = conv_operator(d.kernel_decay, d.n_x, d.n_y, quadrature=d.quadrature)
    X, Y = WeightedLr(d.r, d.n_x), WeightedLr(2.0, d.n_y)
    _, info = power_method(T, X, Y, iters=5000, tol=1e-12, seed=cfg.seed, return_info=True)
    out.mkdir(parents=True, exist_ok=True)
    files = [artifacts.write_csv(out / "history.csv", ("k", "estimate"), enumerate(info.history)),
             artifacts.write_plot_script(out / "plot_history.py", "history.csv", ys=("estimate",))]
    summary = {"op_norm": info.norm, "iterations": info.iterations, "restarts": info.restarts,
               "converged": info.converged, "monotone": info.monotone, "r": d.r}
    if d.r == 2.0:
        summary["svd_norm"] = float(np.linalg.norm(T.matrix, 2))
    files.append(artifacts.write_meta(out / "meta.json", cfg.to_dict(), cfg.seed, experiment="opnorm", **summary))
    return ExperimentOutcome("ok", files, summary, info)


__all__ = [
    "NOMINAL_OP_NORM", "ExperimentOutcome", "DeconvSetup", "spike_signal", "deconv_setup", "scale_sigma",
    "default_C", "deconv_problem", "deconv_reference", "build_schedule", "deconv_experiment",
    "comparison_experiment", "quadratic_data", "quadratic_saddle", "quadratic_problem", "quadratic_experiment",
    "phase_phantom", "phase_setup", "phase_experiment", "opnorm_experiment", "ScheduleError", "RunResult",
]
