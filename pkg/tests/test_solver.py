import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from banach_pd.harness.experiments import quadratic_saddle
from banach_pd.operators import MatrixOp
from banach_pd.resolvents import L1, PowerNorm, QuadraticData, Zero
from banach_pd.solver import (
    SaddleProblem,
    Schedule,
    ScheduleError,
    State,
    StopRule,
    cp_bs_step,
    misfit,
    partial_gap,
    run,
    run_v1,
    run_v2,
    run_v3,
    v1_bound_factor,
    v2_bound,
    v3_omega,
)
from banach_pd.spaces import WeightedLr


def scalar_problem(saddle=True):
    X = Y = WeightedLr(2.0, 1)
    return SaddleProblem(MatrixOp(np.array([[1.0]])), PowerNorm(X, 2.0, 1.0), QuadraticData(Y, np.array([1.0])),
                         X, Y, saddle=(np.array([0.5]), np.array([-0.5])) if saddle else None)


def lr_quadratic(rng, r=1.5, n=16, m=12, alpha=1.0):
    T = rng.standard_normal((m, n)) / math.sqrt(m)
    y0 = rng.standard_normal(m)
    X, Y = WeightedLr(r, n), WeightedLr(2.0, m)
    xb, pb = quadratic_saddle(T, X, alpha, y0)
    return SaddleProblem(MatrixOp(T), PowerNorm(X, 2.0, alpha), QuadraticData(Y, y0), X, Y, saddle=(xb, pb))


def classical_cp(T, y0, alpha, sigma, tau, iters):
    """Textbook Chambolle-Pock for alpha||x||_1 + 1/2||Tx - y0||^2 in l2."""
    x = np.zeros(T.shape[1])
    p = np.zeros(T.shape[0])
    xh = x.copy()
    out = []
    for _ in range(iters):
        p = (p + sigma * (T @ xh - y0)) / (1 + sigma)
        v = x - tau * T.T @ p
        xn = np.sign(v) * np.maximum(np.abs(v) - tau * alpha, 0)
        xh = 2 * xn - x
        x = xn
        out.append((x.copy(), p.copy()))
    return out


# --- single step -----------------------------------------------------------

def test_scalar_one_step():
    pr = scalar_problem()
    s = cp_bs_step(pr, State(np.zeros(1), np.zeros(1), np.zeros(1)), 0.5, 0.5, 1.0)
    assert s.p[0] == pytest.approx(-1 / 3, abs=1e-15)
    assert s.x[0] == pytest.approx(1 / 9, abs=1e-15)
    assert s.x_hat[0] == pytest.approx(2 / 9, abs=1e-15)


def test_zero_functions_hilbert_step(rng):
    X = Y = WeightedLr(2.0, 1)
    pr = SaddleProblem(MatrixOp(np.array([[2.0]])), Zero(X), QuadraticData(Y, np.zeros(1)), X, Y)
    # with f = 0 the primal line is a plain gradient step
    s = cp_bs_step(pr, State(np.array([1.0]), np.array([0.5]), np.array([1.0])), 0.2, 0.3, 0.0)
    p1 = (0.5 + 0.2 * 2.0) / 1.2
    assert s.p[0] == pytest.approx(p1)
    assert s.x[0] == pytest.approx(1.0 - 0.3 * 2.0 * p1)
    assert_array_equal(s.x_hat, s.x)  # theta = 0


def test_step_rejects_nonpositive():
    with pytest.raises(ScheduleError):
        cp_bs_step(scalar_problem(), State(np.zeros(1), np.zeros(1), np.zeros(1)), 0.0, 1.0, 1.0)


@pytest.mark.parametrize("r", [2.0, 1.5])
def test_saddle_is_fixed_point(rng, r):
    pr = lr_quadratic(rng, r=r)
    xb, pb = pr.saddle
    s = cp_bs_step(pr, State(xb, pb, xb), 0.3, 0.4, 1.0)
    assert_allclose(s.x, xb, atol=1e-9)
    assert_allclose(s.p, pb, atol=1e-9)


# --- V1 --------------------------------------------------------------------

def test_v1_scalar_converges():
    res = run_v1(scalar_problem(), 0.9, 0.9, C=0.96, stop=StopRule(200, stag_tol=0))
    assert abs(res.x[0] - 0.5) <= 1e-8
    assert abs(res.p[0] + 0.5) <= 1e-8


def test_v1_start_at_saddle(rng):
    pr = lr_quadratic(rng, r=2.0)
    L = pr.norm()
    res = run_v1(pr, 0.5 / L, 0.5 / L, stop=StopRule(50, stag_tol=0), x0=pr.saddle[0], p0=pr.saddle[1])
    assert np.nanmax(res.column("misfit")) <= 1e-14
    assert_allclose(res.x, pr.saddle[0], atol=1e-12)
    exact = run_v1(scalar_problem(), 0.9, 0.9, stop=StopRule(50, stag_tol=0), x0=[0.5], p0=[-0.5])
    assert np.all(exact.column("misfit") == 0.0)


@pytest.mark.parametrize("r", [2.0, 1.5])
def test_v1_bound(rng, r):
    pr = lr_quadratic(rng, r=r)
    L = pr.norm()
    C = min(0.5, pr.convexity_product())
    sigma = tau = 0.9 * math.sqrt(C) / L
    res = run_v1(pr, sigma, tau, C=C, stop=StopRule(2000, stag_tol=0))
    bound = v1_bound_factor(L, sigma, tau, C) * res.misfit0
    assert np.all(res.column("misfit") <= bound)


def test_v1_bound_factor():
    assert v1_bound_factor(1.0, 0.5, 0.5, 1.0) == pytest.approx(4 / 3)
    assert v1_bound_factor(1.0, 1.0, 1.0, 1.0) == math.inf


def test_hilbert_regression(rng):
    T = rng.standard_normal((8, 8))
    y0 = rng.standard_normal(8)
    X, Y = WeightedLr(2.0, 8), WeightedLr(2.0, 8)
    pr = SaddleProblem(MatrixOp(T), L1(X, 0.3), QuadraticData(Y, y0), X, Y)
    L = np.linalg.norm(T, 2)
    sigma, tau = 0.7 / L, 0.9 / L
    res = run_v1(pr, sigma, tau, stop=StopRule(100, stag_tol=0), keep_iterates=True, backend="generic")
    ref = classical_cp(T, y0, 0.3, sigma, tau, 100)
    assert len(res.records) == 100
    for rec, (x, p) in zip(res.records, ref):
        assert np.max(np.abs(rec.x - x)) <= 1e-14 * max(1.0, np.max(np.abs(x)))
        assert np.max(np.abs(rec.p - p)) <= 1e-14 * max(1.0, np.max(np.abs(p)))


def test_fused_matches_generic(rng):
    T = rng.standard_normal((10, 14))
    y0 = rng.standard_normal(10)
    X, Y = WeightedLr(1.5, rng.uniform(0.5, 2, 14)), WeightedLr(2.0, 10)
    pr = SaddleProblem(MatrixOp(T), L1(X, 0.2), QuadraticData(Y, y0), X, Y)
    sched = Schedule.balanced_v1(pr.norm(), C=0.5)
    stop = StopRule(300, stag_tol=0)
    a = run(pr, sched, stop, record=False, backend="fused")
    b = run(pr, sched, stop, record=True, backend="generic")
    assert a.iterations == b.iterations == 300
    assert_allclose(a.x, b.x, rtol=1e-12, atol=1e-14)
    assert_allclose(a.p, b.p, rtol=1e-12, atol=1e-14)


def test_pure_backend_matches(tmp_path):
    code = (
        "import numpy as np\n"
        "from banach_pd import BACKEND\n"
        "from banach_pd.operators import MatrixOp\n"
        "from banach_pd.resolvents import L1, QuadraticData\n"
        "from banach_pd.solver import SaddleProblem, Schedule, StopRule, run\n"
        "from banach_pd.spaces import WeightedLr\n"
        "rng = np.random.default_rng(3)\n"
        "T = rng.standard_normal((6, 9)); y0 = rng.standard_normal(6)\n"
        "X, Y = WeightedLr(1.25, 9), WeightedLr(2.0, 6)\n"
        "pr = SaddleProblem(MatrixOp(T), L1(X, 0.1), QuadraticData(Y, y0), X, Y)\n"
        "res = run(pr, Schedule.balanced_v1(pr.norm(), C=0.5), StopRule(200, stag_tol=0), record=False)\n"
        "print(BACKEND); print(repr(res.x.tolist()))\n"
    )
    outs = {}
    for pure in ("0", "1"):
        env = dict(os.environ, BANACH_PD_PURE=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, x = out.stdout.strip().splitlines()
        outs[pure] = (backend, np.array(eval(x)))
    assert outs["1"][0] == "python"
    assert_allclose(outs["0"][1], outs["1"][1], rtol=1e-10, atol=1e-13)


# --- V2 --------------------------------------------------------------------

def test_v2_first_steps():
    steps = Schedule.v2(0.3, 1.0, 1.0, C=1.0).steps()
    s0, t0, th0 = next(steps)
    assert (s0, t0) == (0.3, 1.0)
    assert th0 == pytest.approx(2**-0.5)
    s1, t1, _ = next(steps)
    assert t1 == pytest.approx(2**-0.5)
    assert s1 == pytest.approx(0.3 * 2**0.5)


@pytest.mark.parametrize("r", [2.0, 1.5])
def test_v2_product_and_rate(rng, r):
    pr = scalar_problem() if r == 2.0 else lr_quadratic(rng, r=r)
    L = pr.norm()
    sigma0 = tau0 = math.sqrt(0.9) / L
    res = run_v2(pr, tau0, sigma0, 1.0, C=0.96, stop=StopRule(2000, stag_tol=0), keep_iterates=True)
    prod = res.column("tau_k") * res.column("sigma_k")
    assert np.max(np.abs(prod - sigma0 * tau0)) <= 1e-14 * sigma0 * tau0
    xb, pb = pr.saddle
    bx0 = pr.X.bregman(xb, np.zeros(pr.X.shape))
    bp0 = pr.Ystar.bregman(pb, np.zeros(pr.Ystar.shape))
    N = np.arange(1, len(res.records) + 1)
    lhs = np.array([pr.X.bregman(xb, rec.x) for rec in res.records])
    rhs = np.array([v2_bound(n, bx0, bp0, 1.0, sigma0, tau0) for n in N])
    ok = lhs <= rhs
    assert ok[100:].all()


def test_v2_bound_formula():
    assert v2_bound(2, 1.0, 0.0, 1.0, 1.0, 1.0) == pytest.approx(2.0)


def test_v2_rejects():
    with pytest.raises(ScheduleError):
        Schedule.v2(0.1, 0.1, 0.0)
    pr = scalar_problem()
    with pytest.raises(ScheduleError):  # gamma exceeds the modulus of f
        run_v2(pr, 0.5, 0.5, 2.0)
    with pytest.raises(ScheduleError):
        run_v2(pr, 1.0, 1.0, 1.0)


# --- V3 --------------------------------------------------------------------

def test_v3_omega_example():
    assert v3_omega(0.5, 1.0) == pytest.approx(0.5)
    assert Schedule.v3(1.0, 1.0, 1.0, 0.5, C=1.0).omega == pytest.approx(0.5)


@pytest.mark.parametrize("theta_rule", ["low", "one"])
@pytest.mark.parametrize("r", [2.0, 1.5])
def test_v3_lyapunov(rng, r, theta_rule):
    pr = scalar_problem() if r == 2.0 else lr_quadratic(rng, r=r)
    L = pr.norm()
    C = 0.96 if r == 2.0 else min(0.96, pr.convexity_product())
    mu = math.sqrt(C) / L
    theta = 1 / (1 + mu) if theta_rule == "low" else 1.0
    res = run_v3(pr, 1.0, 1.0, mu, theta, C=C, stop=StopRule(300, stag_tol=0), keep_iterates=True)
    om = res.schedule.omega
    xb, pb = pr.saddle
    start = pr.Ystar.bregman(pb, np.zeros(pr.Ystar.shape)) + pr.X.bregman(xb, np.zeros(pr.X.shape))
    ly = res.column("lyapunov")
    N = np.arange(1, len(ly) + 1)
    floor = 1e-13 * start  # rounding floor once the iterates reach the saddle
    assert np.all(ly <= om**N * start + floor)


def test_v3_start_at_saddle():
    pr = scalar_problem()
    res = run_v3(pr, 1.0, 1.0, 0.9, stop=StopRule(30, stag_tol=0), x0=pr.saddle[0], p0=pr.saddle[1])
    assert np.all(res.column("lyapunov") == 0.0)


def test_v3_rejects():
    pr = scalar_problem()
    with pytest.raises(ScheduleError):
        Schedule.v3(0.0, 1.0, 0.5)
    with pytest.raises(ScheduleError):
        run_v3(pr, 1.0, 1.0, 1.0, C=0.96)  # mu above sqrt(C)
    with pytest.raises(ScheduleError):
        run_v3(pr, 1.0, 1.0, 0.5, theta=0.5)  # theta below 1/(1 + mu)


def test_v1_schedule_errors():
    pr = scalar_problem()
    with pytest.raises(ScheduleError):
        run_v1(pr, 1.0, 1.0, C=0.96)
    with pytest.raises(ScheduleError):
        run_v1(pr, -0.1, 0.1)
    with pytest.raises(ScheduleError):
        Schedule.v1(0.1, 0.1, theta=0.5)
    with pytest.raises(ScheduleError):
        run(pr, Schedule.v1(0.1, 0.1, C=1.5))
    assert Schedule.v1(0.1, 0.1, theta=0.5, diagnostic=True).theta == 0.5


# --- misfit and gap --------------------------------------------------------

def test_misfit_hilbert_and_lr(rng):
    pr = lr_quadratic(rng, r=1.5)
    xb, pb = pr.saddle
    assert misfit(pr, xb, pb, pr.saddle, 0.3, 0.7) <= 1e-14
    x, p = rng.standard_normal(16), rng.standard_normal(12)
    expected = pr.Ystar.bregman(pb, p) / 0.3 + pr.X.bregman(xb, x) / 0.7
    assert misfit(pr, x, p, pr.saddle, 0.3, 0.7) == pytest.approx(expected, rel=1e-14)
    h = scalar_problem()
    assert misfit(h, np.array([0.0]), np.array([0.0]), h.saddle, 0.5, 0.25) == pytest.approx(
        0.25 / (2 * 0.5) + 0.25 / (2 * 0.25))


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_gap_nonnegative_scalar(x, p):
    pr = scalar_problem()
    box = (-2.0, 2.0)
    assert partial_gap(pr, np.array([x]), np.array([p]), box, box) >= -1e-12


def test_gap_zero_at_saddle(rng):
    pr = lr_quadratic(rng, r=1.5)
    xb, pb = pr.saddle
    assert abs(partial_gap(pr, xb, pb, (xb, xb), (pb, pb))) <= 1e-12
    assert partial_gap(pr, xb, pb, (-2.0, 2.0), (-2.0, 2.0)) == pytest.approx(0.0, abs=1e-9)


def test_gap_l1_by_hand():
    t, a, y0 = 2.0, 0.5, 1.0
    X = Y = WeightedLr(2.0, 1)
    pr = SaddleProblem(MatrixOp(np.array([[t]])), L1(X, a), QuadraticData(Y, np.array([y0])), X, Y)
    x, p = 0.8, -0.3
    lx, ux, lp, up = -1.0, 1.5, -2.0, 0.25
    q = min(max(t * x - y0, lp), up)  # concave quadratic, clipped vertex
    upper = t * x * q - (0.5 * q * q + y0 * q) + a * abs(x)
    lower = min(t * u * p + a * abs(u) for u in (lx, ux, 0.0)) - (0.5 * p * p + y0 * p)
    got = partial_gap(pr, np.array([x]), np.array([p]), (lx, ux), (lp, up))
    assert got == pytest.approx(upper - lower, rel=1e-14)


def test_ergodic_gap_bound():
    pr = scalar_problem()
    sigma = tau = 0.9
    res = run_v1(pr, sigma, tau, stop=StopRule(500, stag_tol=0), gap_box=((-2.0, 2.0), (-2.0, 2.0)))
    # sup of Delta_0 over box vertices, from x0 = p0 = 0
    sup0 = 4 / (2 * sigma) + 4 / (2 * tau)
    N = np.arange(1, 501)
    assert np.all(res.column("gap") <= sup0 / N)


def test_divergence_detected():
    X = Y = WeightedLr(2.0, 1)
    pr = SaddleProblem(MatrixOp(np.array([[1.0]])), Zero(X), QuadraticData(Y, np.array([1.0])), X, Y,
                       saddle=(np.array([1.0]), np.array([0.0])))
    sched = Schedule.v1(3.0, 3.0, C=1.0)
    sched.validate = lambda problem: None  # bypass the premise check on purpose
    res = run(pr, sched, StopRule(10_000, stag_tol=0))
    assert res.diverged and res.iterations < 10_000


def test_problem_shape_checks(rng):
    X, Y = WeightedLr(2.0, 3), WeightedLr(2.0, 4)
    with pytest.raises(ValueError):
        SaddleProblem(MatrixOp(np.zeros((4, 2))), Zero(X), QuadraticData(Y, np.zeros(4)), X, Y)
    with pytest.raises(ValueError):
        SaddleProblem(MatrixOp(np.zeros((4, 3))), Zero(WeightedLr(1.5, 3)), QuadraticData(Y, np.zeros(4)), X, Y)
