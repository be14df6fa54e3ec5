#!/usr/bin/env python3
"""Reproduce the full jamming and flooding parameter sweeps and their
cross-scenario correlation reports.

Usage:
    python scripts/reproduce_sweeps.py --weights WEIGHTS [--out-dir OUT]
                                       [--quick] [--jobs N]

Full scale runs the complete protocol (10 executions per cell, all attack
positions); expect on the order of an hour or two on one core.  --quick
drops to 3 executions and a reduced grid for a desk-scale check.

Produces OUT/jam/ and OUT/flo/ with results.csv, correlation.csv, and
manifest.txt each.
"""

import argparse
import sys

from neurostrike.cli import main


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--weights", required=True)
    parser.add_argument("--out-dir", default="out/sweeps")
    parser.add_argument("--quick", action="store_true")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    common = ["--weights", args.weights, "--jobs", str(args.jobs)]
    if args.quick:
        common.append("--quick")

    rc = main(["sweep-jam", "--out-dir", f"{args.out_dir}/jam"] + common)
    if rc:
        return rc
    return main(["sweep-flo", "--out-dir", f"{args.out_dir}/flo"] + common)


if __name__ == "__main__":
    sys.exit(run())
