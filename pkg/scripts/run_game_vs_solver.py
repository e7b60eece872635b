#!/usr/bin/env python3
"""Cross-validate Monte Carlo game values against the grid solver.

Solves the configured problem, then simulates the game under the greedy
strategy pair read off the solved field at a handful of probe points and
prints the discrepancy table (also written as CSV by the simulate command).
"""

import argparse
import sys
from pathlib import Path

from tugrobin.cli import main as cli_main

DEFAULT_PROBES = ["0.7,0.2", "0.95,-0.4", "0.0,1.1", "-1.25,0.0", "1.0,1.0"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/annulus_radial.json")
    ap.add_argument("--out", default="results/game_vs_solver")
    ap.add_argument("--threads", type=int, default=0)
    ap.add_argument("--point", action="append", default=None)
    args = ap.parse_args()
    points = args.point or DEFAULT_PROBES
    code = cli_main(["solve", "--config", args.config, "--out", args.out,
                     "--threads", str(args.threads)])
    if code != 0:
        return code
    argv = ["simulate", "--config", args.config, "--out", args.out,
            "--strategy", "greedy",
            "--field", str(Path(args.out) / "u_eps.csv"),
            "--threads", str(args.threads)]
    for p in points:
        argv += ["--point", p]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
