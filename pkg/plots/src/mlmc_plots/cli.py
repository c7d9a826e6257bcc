"""Command-line entry point: plot-convergence."""
from __future__ import annotations

import argparse
import sys

from .figure import PlotDataError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot-convergence",
        description="Render a four-panel MLMC convergence figure from "
                    "levels.csv and summary.csv.")
    parser.add_argument("--levels", required=True,
                        help="per-level statistics CSV (levels.csv)")
    parser.add_argument("--summary", required=True,
                        help="per-target summary CSV (summary.csv)")
    parser.add_argument("--out", required=True, help="output PNG path")
    args = parser.parse_args(argv)
    try:
        beta = render(args.levels, args.summary, args.out)
    except PlotDataError as exc:
        print("input error: %s" % exc, file=sys.stderr)
        return 1
    print("wrote %s (fitted beta = %.6f)" % (args.out, beta))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
