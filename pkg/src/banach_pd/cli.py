"""Command-line entry point: ``banach-pd {deconv,phase,quadratic,opnorm,selftest}``.

Exit codes: 0 success, 1 configuration or step-size error, 2 solver
divergence, 3 selftest failure or a failed space-comparison ordering.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .harness.reference import ReferenceError
from .solver import ScheduleError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3
SUBCOMMANDS = ("deconv", "phase", "quadratic", "opnorm", "selftest")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int, help="unsigned 64-bit RNG seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--r", type=float, help="primal space exponent")
    common.add_argument("--sigma", type=float,
                        help="dual step; for deconv a nominal value rescaled by the measured ||T||")
    common.add_argument("--tau", type=float, help="primal step (used as given)")
    common.add_argument("--variant", choices=("V1", "V2", "V3"))
    common.add_argument("--alpha", type=float, help="regularization parameter (alpha0 for phase)")
    common.add_argument("--iters", type=int, help="iteration budget (inner iterations for phase)")
    common.add_argument("--timing", action="store_true", help="record wall-clock time in traces")

    p = argparse.ArgumentParser(prog="banach-pd", description="Primal-dual splitting in Banach spaces")
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("deconv", parents=[common], help="spike deconvolution with an l1 penalty")
    d.add_argument("--compare", action="store_true",
                   help="iteration counts over seeded repetitions, l2 against the Banach space")
    d.add_argument("--reps", type=int, help="repetitions for --compare")
    sub.add_parser("phase", parents=[common], help="phase retrieval with the Newton method")
    sub.add_parser("quadratic", parents=[common], help="quadratic problem with a known saddle point")
    sub.add_parser("opnorm", parents=[common], help="operator norm by the power method")
    sub.add_parser("selftest", parents=[common], help="run the invariant checks")
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    data = cfg.to_dict()
    cmd = args.command
    if cmd in ("deconv", "phase", "quadratic", "opnorm"):
        data["experiment"] = cmd
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["output"]["dir"] = str(args.out)
    if args.timing:
        data["output"]["timing"] = True
    s = data["solver"]
    for key in ("sigma", "tau", "variant"):
        if getattr(args, key) is not None:
            s[key] = getattr(args, key)
    section = {"deconv": "deconv", "opnorm": "deconv", "phase": "phase", "quadratic": "quadratic"}.get(cmd)
    if args.r is not None and section:
        data[section]["r"] = args.r
    if args.alpha is not None:
        if cmd == "phase":
            data["phase"]["alpha0"] = args.alpha
        elif section:
            data[section]["alpha"] = args.alpha
    if args.iters is not None:
        if cmd == "phase":
            data["phase"]["inner_iters"] = args.iters
        else:
            s["max_iters"] = args.iters
            data["comparison"]["max_iters"] = args.iters
    if getattr(args, "reps", None) is not None:
        data["comparison"]["repetitions"] = args.reps
    return config_from_dict(data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "selftest":
        from .harness.selftest import run_selftest
        return EXIT_OK if run_selftest(args.seed or 0) else EXIT_CHECK_FAILED
    try:
        base = load_config(args.config) if args.config else ExperimentConfig()
        cfg = _apply_overrides(base, args)
    except (ConfigError, OSError) as exc:
        print(f"banach-pd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from .harness import experiments as ex
    out = Path(cfg.output.dir)
    runner = {"deconv": ex.deconv_experiment, "phase": ex.phase_experiment,
              "quadratic": ex.quadratic_experiment, "opnorm": ex.opnorm_experiment}[args.command]
    if args.command == "deconv" and args.compare:
        runner = ex.comparison_experiment
    try:
        outcome = runner(cfg, out)
    except (ScheduleError, ConfigError, ValueError) as exc:
        print(f"banach-pd: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReferenceError as exc:
        print(f"banach-pd: reference minimizer failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    for key, value in outcome.summary.items():
        if key == "cells":
            for c in value:
                print(f"r={c['r']:g} sigma={c['sigma_nominal']:g}: median {c['median']:g}, "
                      f"mean {c['mean']:g}, converged {c['converged']}")
        elif not hasattr(value, "__len__") or isinstance(value, str):
            print(f"{key}: {value}")
    print(f"wrote {len(outcome.files)} file(s) to {out}")
    if outcome.diverged:
        print("banach-pd: solver diverged", file=sys.stderr)
        return EXIT_DIVERGED
    if outcome.status == "ordering_failed":
        print("banach-pd: the Banach-space median was not below the l2 median for every sigma", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
