#!/usr/bin/env python3
"""Run a baseline biological simulation plus one jamming and one flooding
attack, and export tagged raster diffs for plotting.

Usage:
    python scripts/attack_demo.py --weights WEIGHTS [--out-dir OUT]

Produces, under OUT/:
    baseline/   spikes.csv, metrics.txt
    jam/        spikes.csv, metrics.txt, raster.csv (vs baseline)
    flo/        spikes.csv, metrics.txt, raster.csv (vs baseline)
"""

import argparse
import sys

from neurostrike.cli import main


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--weights", required=True)
    parser.add_argument("--out-dir", default="out/demo")
    parser.add_argument("--n-neurons", type=int, default=50)
    args = parser.parse_args(argv)
    base = f"{args.out_dir}/baseline"
    jam = f"{args.out_dir}/jam"
    flo = f"{args.out_dir}/flo"
    n = str(args.n_neurons)

    rc = main(["run-bio", "--weights", args.weights, "--out-dir", base])
    if rc:
        return rc
    rc = main(["run-bio", "--weights", args.weights, "--out-dir", jam,
               "--attack", "jam", "--n-neurons", n,
               "--first-pos", "1", "--n-pos", "27"])
    if rc:
        return rc
    rc = main(["run-bio", "--weights", args.weights, "--out-dir", flo,
               "--attack", "flo", "--n-neurons", n,
               "--first-pos", "1", "--vi", "40"])
    if rc:
        return rc
    for attacked in (jam, flo):
        rc = main(["export-raster", "--attacked", f"{attacked}/spikes.csv",
                   "--baseline", f"{base}/spikes.csv", "--out-dir", attacked])
        if rc:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run())
