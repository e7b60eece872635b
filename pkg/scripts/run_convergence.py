#!/usr/bin/env python3
"""Solver-versus-oracle convergence experiment.

Runs the annulus study from a config (default: configs/convergence_study.json)
and leaves convergence.csv plus a manifest in the config's output directory.
"""

import argparse
import sys

from tugrobin.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/convergence_study.json")
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args()
    argv = ["convergence", "--config", args.config, "--threads", str(args.threads)]
    if args.out:
        argv += ["--out", args.out]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
