"""Long-run reference minimizers with an on-disk cache."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..solver import SaddleProblem, Schedule, StopRule, run

CACHE_ENV = "BANACH_PD_CACHE"


class ReferenceError(RuntimeError):
    pass


@dataclass
class Reference:
    x: np.ndarray
    p: np.ndarray
    iterations: int
    status: str
    from_cache: bool = False


def cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "banach-pd"


def _digest_array(h, a):
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    h.update(str(a.shape).encode())
    h.update(a.tobytes())


def problem_key(problem: SaddleProblem, x0, p0, schedule: Schedule, budget: int, stag_tol: float) -> str:
    """Hash of everything that determines the reference run."""
    h = hashlib.sha256()
    meta = {
        "version": __version__,
        "X": repr(problem.X), "Y": repr(problem.Y),
        "f": problem.f.tag, "g": problem.g.tag,
        "f_params": {k: v for k, v in vars(problem.f).items() if isinstance(v, (int, float, str))},
        "sigma": schedule.sigma, "tau": schedule.tau, "budget": budget, "stag_tol": stag_tol,
    }
    h.update(json.dumps(meta, sort_keys=True).encode())
    for arr in (problem.X.weights if hasattr(problem.X, "weights") else (),
                problem.Y.weights if hasattr(problem.Y, "weights") else (),
                getattr(problem.g, "y0", ()), x0, p0):
        _digest_array(h, arr)
    mat = getattr(problem.T, "matrix", None)
    if mat is None:
        raise ReferenceError("reference caching needs a dense operator")
    _digest_array(h, mat)
    return h.hexdigest()[:32]


def reference_minimizer(problem: SaddleProblem, budget: int = 1_000_000, x0=None, p0=None,
                        C: float = 0.95, stag_tol: float = 1e-13, use_cache: bool = True) -> Reference:
    """Minimizer from a long V1 run with ``sigma = tau = sqrt(C)/||T||``.

    ``C`` is capped at the product of the convexity constants of ``X`` and
    ``Y*``; near-one products need not converge outside Hilbert spaces.

    Results are cached under ``$BANACH_PD_CACHE`` keyed by a hash of the
    problem data and run settings. A run that exhausts ``budget`` without
    stagnating raises :class:`ReferenceError` and writes nothing.
    """
    if budget < 100_000:
        raise ValueError("reference runs need a budget of at least 1e5 iterations")
    x0 = np.zeros(problem.X.shape) if x0 is None else np.asarray(x0, float)
    p0 = np.zeros(problem.Ystar.shape) if p0 is None else np.asarray(p0, float)
    sched = Schedule.balanced_v1(problem.norm(), min(C, problem.convexity_product()))
    path = None
    if use_cache:
        key = problem_key(problem, x0, p0, sched, budget, stag_tol)
        path = cache_dir() / f"ref_{key}.npz"
        if path.exists():
            with np.load(path) as z:
                return Reference(z["x"], z["p"], int(z["iterations"]), str(z["status"]), True)
    res = run(problem, sched, StopRule(budget, stag_tol=stag_tol), x0=x0, p0=p0, record=False)
    if res.status != "stagnation":
        raise ReferenceError(f"reference run ended with status {res.status!r} after {res.iterations} iterations")
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, x=res.x, p=res.p, iterations=res.iterations, status=res.status)
        os.replace(tmp, path)
    return Reference(res.x, res.p, res.iterations, res.status)
