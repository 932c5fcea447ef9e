"""Compare the compiled kernels with the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on both
backends with the same inputs, and the outputs are checked for agreement.
"""
import argparse
import timeit

import numpy as np

from banach_pd import _pykernels as py
from banach_pd.operators import conv_operator, power_method
from banach_pd.spaces import WeightedLr

try:
    from banach_pd import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_duality_map(mod, n, repeat):
    rng = np.random.default_rng(0)
    v, w = rng.standard_normal(n), rng.uniform(0.5, 2.0, n)
    number = max(1, 20000 // n)
    t = best_of(lambda: mod.lr_duality_map(v, w, 1.25, 2.0), repeat, number)
    return t, mod.lr_duality_map(v, w, 1.25, 2.0)


def bench_dense_loop(mod, iters, repeat):
    T = conv_operator(5.0, 64, 127, quadrature="none").matrix
    rng = np.random.default_rng(0)
    y0 = T @ np.where(rng.uniform(size=64) < 0.1, 1.0, 0.0) + 0.1 * rng.standard_normal(127)
    L = power_method(conv_operator(5.0, 64, 127, quadrature="none"), WeightedLr(1.25, 64), WeightedLr(2.0, 127))
    sigma = 0.5 / L
    tau = 0.93 / (sigma * L * L)
    args = dict(T=T, y0=y0, wy=np.ones(127), rx=1.25, wx=np.ones(64), f_kind=py.F_L1, f_scale=5.0,
                sigma=sigma, tau=tau, theta=1.0, x0=np.zeros(64), p0=np.zeros(127), max_iter=iters)
    t = best_of(lambda: mod.cpbs_dense_run(**args), repeat, 1)
    return t, mod.cpbs_dense_run(**args)[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=2000, help="iterations of the dense loop")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    mods = {"python": py}
    if cy is None:
        print("compiled extension not available; timing the numpy fallback only")
    else:
        mods["cython"] = cy

    print(f"{'kernel':<28}{'backend':<10}{'time':>14}{'speedup':>10}")
    cases = [(f"duality map n={n}", lambda m, n=n: bench_duality_map(m, n, args.repeat)) for n in (64, 1024, 16384)]
    cases.append((f"dense loop 127x64 x{args.iters}", lambda m: bench_dense_loop(m, args.iters, args.repeat)))
    for name, fn in cases:
        results = {b: fn(m) for b, m in mods.items()}
        base = results["python"][0]
        for b, (t, _) in results.items():
            print(f"{name:<28}{b:<10}{t * 1e6:>12.1f}us{base / t:>9.1f}x")
        if "cython" in results:
            dev = np.max(np.abs(results["cython"][1] - results["python"][1]))
            print(f"{'':<28}max |cython - python| = {dev:.1e}")


if __name__ == "__main__":
    main()
