#!/usr/bin/env python3
"""Run every verification suite against one config and summarize.

Each suite writes its own CSV + manifest; the script exits nonzero if any
suite fails, mirroring the CLI's exit-code contract.
"""

import argparse
import sys

from tugrobin.cli import main as cli_main

SUITES = ["operator", "moments", "barrier", "extremal", "holder"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/annulus_radial.json")
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args()
    failures = []
    for suite in SUITES:
        print(f"=== suite: {suite} ===")
        argv = ["verify", "--config", args.config, "--suite", suite,
                "--threads", str(args.threads)]
        if args.out:
            argv += ["--out", args.out]
        code = cli_main(argv)
        if code != 0:
            failures.append(suite)
    if failures:
        print(f"failed suites: {', '.join(failures)}")
        return 1
    print("all suites passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
