"""Command-line entry point.

    sim <flipflop|memory|estimate|validate> --config FILE --out DIR
        [--seed N] [--traj N]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import default_validate_config, load_config
from .errors import ConfigError, NumericalError, ValidationFailure
from .experiments import run_estimate, run_flipflop, run_memory, run_validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sim",
        description="Run flip-flop memory simulations and estimates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("flipflop", "scheduled Set/Reset trajectory run"),
        ("memory", "unpulsed ensemble decay with exponential fit"),
        ("estimate", "closed-form memory-time estimates and sweeps"),
        ("validate", "trajectory vs master-equation cross checks"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=(name != "validate"),
                         help="YAML experiment configuration")
        cmd.add_argument("--out", required=True,
                         help="output directory (created if missing)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override ensemble.base_seed")
        cmd.add_argument("--traj", type=int, default=None,
                         help="override ensemble.n_traj")
    return parser


def _load(args):
    if args.config is None:
        cfg = default_validate_config()
    else:
        cfg = load_config(args.config)
    if cfg.kind != args.command:
        raise ConfigError(
            f"config is for experiment kind '{cfg.kind}' but the "
            f"'{args.command}' subcommand was invoked"
        )
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.traj is not None:
        if args.traj < 1:
            raise ConfigError("--traj must be >= 1")
        overrides["n_traj"] = args.traj
    if overrides:
        resolved = dict(cfg.resolved)
        ens = dict(resolved.get("ensemble", {}))
        if "base_seed" in overrides:
            ens["base_seed"] = overrides["base_seed"]
        if "n_traj" in overrides:
            ens["n_traj"] = overrides["n_traj"]
        resolved["ensemble"] = ens
        cfg = replace(cfg, resolved=resolved, **overrides)
    return cfg


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "flipflop":
            summary = run_flipflop(cfg, args.out)
            n = len(summary["trajectories"])
            print(f"flipflop: wrote {n} trajectory CSV(s) to {args.out}")
            if summary["failures"]:
                print(f"flipflop: {len(summary['failures'])} member(s) failed",
                      file=sys.stderr)
        elif args.command == "memory":
            payload = run_memory(cfg, args.out)
            t = payload["memory_time_us"]
            u = payload["uncertainty_us"]
            flag = " (unreliable)" if payload["unreliable"] else ""
            if t is None:
                print(f"memory: no usable decay fit{flag}; "
                      f"outputs in {args.out}")
            else:
                print(f"memory: fitted decay time {t:.6g} us "
                      f"+/- {u:.3g} us{flag}; outputs in {args.out}")
        elif args.command == "estimate":
            rows = run_estimate(cfg, args.out)
            print(f"estimate: wrote {len(rows)} row(s) to "
                  f"{os.path.join(args.out, 'estimate.csv')}")
        elif args.command == "validate":
            report = run_validate(cfg, args.out)
            for check in report["checks"]:
                print(f"  ok {check['name']}")
            print(f"validate: {len(report['checks'])} checks passed")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as exc:
        if exc.report is not None:
            for check in exc.report["checks"]:
                status = "ok" if check["passed"] else "FAIL"
                print(f"  {status} {check['name']}", file=sys.stderr)
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
