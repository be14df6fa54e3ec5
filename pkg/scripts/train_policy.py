#!/usr/bin/env python3
"""Train the maze-solving Q-network and save its weights.

Usage:
    python scripts/train_policy.py [--out-dir OUT] [--seed N]

Produces OUT/weights.txt (plain-text weight dump), OUT/maze.txt, and
OUT/manifest.txt.  The weights file is the input for every other script.
"""

import argparse
import sys

from neurostrike.cli import main


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="out/train")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    return main(["train", "--out-dir", args.out_dir, "--seed", str(args.seed)])


if __name__ == "__main__":
    sys.exit(run())
