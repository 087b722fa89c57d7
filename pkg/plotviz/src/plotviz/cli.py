"""Command line interface: plot <figure-kind> --in <dir> --out <file.png>."""

import argparse
import glob
import os
import sys

from .figures import ColumnError, plot_memory, plot_sweeps, plot_trajectory

FIGURE_KINDS = ("trajectory", "memory", "sweeps")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="plot",
        description="Render figures from simulator output directories.",
    )
    parser.add_argument("kind", choices=FIGURE_KINDS,
                        help="which figure to render")
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory holding the simulator outputs")
    parser.add_argument("--out", dest="out_path", required=True,
                        help="output PNG path")
    return parser


def _trajectory_csv(in_dir):
    plain = os.path.join(in_dir, "trajectory.csv")
    if os.path.exists(plain):
        return plain
    numbered = sorted(glob.glob(os.path.join(in_dir, "trajectory_*.csv")))
    if numbered:
        return numbered[0]
    raise FileNotFoundError(f"{in_dir}: no trajectory.csv or trajectory_*.csv")


def run(argv=None):
    args = _build_parser().parse_args(argv)
    in_dir = args.in_dir
    if not os.path.isdir(in_dir):
        print(f"error: {in_dir} is not a directory", file=sys.stderr)
        return 2
    out_dir = os.path.dirname(os.path.abspath(args.out_path))
    os.makedirs(out_dir, exist_ok=True)
    try:
        if args.kind == "trajectory":
            result = plot_trajectory(_trajectory_csv(in_dir), args.out_path)
        elif args.kind == "memory":
            mean_csv = os.path.join(in_dir, "mean.csv")
            fit_json = os.path.join(in_dir, "fit.json")
            for path in (mean_csv, fit_json):
                if not os.path.exists(path):
                    raise FileNotFoundError(f"missing {path}")
            result = plot_memory(mean_csv, fit_json, args.out_path)
        else:
            csvs = sorted(glob.glob(os.path.join(in_dir, "*.csv")))
            if not csvs:
                raise FileNotFoundError(f"{in_dir}: no CSV files")
            result = plot_sweeps(csvs, args.out_path)
    except (ColumnError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result.path)
    return 0


def entry():
    sys.exit(run())


if __name__ == "__main__":
    entry()
