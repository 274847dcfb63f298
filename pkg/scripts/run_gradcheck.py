"""Finite-difference verification of every op plus the tiny end-to-end model.

Ten seeds per op takes under a minute; exit code 2 flags any failure.
"""

import argparse
import sys

from regioncount.cli import main as cli


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args(argv)
    return cli(["gradcheck", "--seeds", str(args.seeds)])


if __name__ == "__main__":
    sys.exit(run())
