"""Quick invariant checks runnable without pytest."""
from __future__ import annotations

import numpy as np

from ..operators import FresnelConfig, MatrixOp, PhaseRetrieval, adjoint_mismatch, fresnel_propagate
from ..resolvents import L1, PowerNorm, QuadraticData, argmin_oracle
from ..solver import SaddleProblem, Schedule, StopRule, run
from ..spaces import WeightedLr


def _duality(rng):
    worst = 0.0
    for r in (1.1, 1.5, 2.0):
        X = WeightedLr(r, rng.uniform(0.5, 2.0, 16))
        for _ in range(50):
            v = rng.standard_normal(16)
            j = X.duality_map(v)
            n2 = X.norm(v) ** 2
            worst = max(worst, abs(v @ j - n2) / n2, abs(X.dual.norm(j) ** 2 - n2) / n2,
                        np.max(np.abs(X.dual.duality_map(j) - v)) / np.max(np.abs(v)))
    return worst <= 1e-10, f"max relative defect {worst:.2e}"


def _bregman(rng):
    worst = 0.0
    for r in (1.25, 2.0):
        X = WeightedLr(r, 8)
        for _ in range(50):
            x, y, z = rng.standard_normal((3, 8))
            lhs = X.bregman(x, y)
            rhs = X.dual.bregman(X.duality_map(y), X.duality_map(x))
            three = X.bregman(x, y) + X.bregman(y, z) - X.bregman(x, z)
            three_rhs = (X.duality_map(z) - X.duality_map(y)) @ (x - y)
            worst = max(worst, abs(lhs - rhs) / max(lhs, 1e-300), abs(three - three_rhs) / (1 + abs(three)))
    return worst <= 1e-10, f"max defect {worst:.2e}"


def _resolvents(rng):
    worst = 0.0
    X = WeightedLr(1.5, 4)
    for f in (PowerNorm(X, 2.0, 1.0), L1(X, 0.7)):
        for _ in range(5):
            u = rng.standard_normal(4)
            x = f.resolvent(0.8, u)
            ref = argmin_oracle(X, f.value, 0.8, u)
            worst = max(worst, float(np.max(np.abs(x - ref))))
    return worst <= 1e-6, f"max oracle distance {worst:.2e}"


def _hilbert_scalar(rng):
    X = Y = WeightedLr(2.0, 1)
    pr = SaddleProblem(MatrixOp(np.array([[1.0]])), PowerNorm(X, 2.0, 1.0), QuadraticData(Y, np.array([1.0])), X, Y)
    res = run(pr, Schedule.v1(0.9, 0.9, 0.96), StopRule(2000, x_ref=np.array([0.5]), tol=1e-12), record=False)
    err = abs(res.x[0] - 0.5) + abs(res.p[0] + 0.5)
    return err <= 1e-10, f"|x - 1/2| + |p + 1/2| = {err:.2e}"


def _operators(rng):
    A = MatrixOp(rng.standard_normal((6, 5)))
    adj = adjoint_mismatch(A)
    cfg = FresnelConfig(n=16)
    u = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    v = fresnel_propagate(u, cfg.chirp, cfg.frequency_sq())
    unit = abs(np.linalg.norm(v) - np.linalg.norm(u)) / np.linalg.norm(u)
    back = np.max(np.abs(fresnel_propagate(v, -cfg.chirp, cfg.frequency_sq()) - u))
    P = PhaseRetrieval(cfg)
    phi, h = rng.standard_normal((2, 16, 16)) * 0.3
    eps = 1e-5
    fd = (P.apply(phi + eps * h) - P.apply(phi - eps * h)) / (2 * eps)
    der = P.derivative(phi).apply(h)
    rel = np.linalg.norm(fd - der) / np.linalg.norm(der)
    ok = adj <= 1e-10 and unit <= 1e-12 and back <= 1e-12 and rel <= 1e-5
    return ok, f"adjoint {adj:.1e}, unitarity {unit:.1e}, round trip {back:.1e}, derivative {rel:.1e}"


CHECKS = (
    ("duality map identities", _duality),
    ("Bregman identities", _bregman),
    ("resolvents vs argmin oracle", _resolvents),
    ("scalar quadratic saddle point", _hilbert_scalar),
    ("operator layer", _operators),
)


def run_selftest(seed: int = 0, echo=print) -> bool:
    """Run every check, print one line each and return whether all passed."""
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    echo(f"selftest: {'all checks passed' if all_ok else 'FAILURES'}")
    return all_ok


__all__ = ["CHECKS", "run_selftest"]
