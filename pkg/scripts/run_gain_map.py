#!/usr/bin/env python3
"""Tabulate the axial gain |Q33(0, z)|^2 over an (epsilon, beta*z) grid.

Writes ``gain_map.csv`` (one row per grid point) and
``critical_lengths.csv`` (the zero-gain and unit-gain interaction lengths
per coupling ratio) into the output directory. Equivalent to
``pamux gainmap`` with explicit grids.
"""

import argparse
import sys

import numpy as np

from pamux.cli import main as cli_main


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/gain_map",
                        help="output directory (default: %(default)s)")
    parser.add_argument("--eps-min", type=float, default=0.05)
    parser.add_argument("--eps-max", type=float, default=0.95)
    parser.add_argument("--eps-step", type=float, default=0.05)
    parser.add_argument("--bz-min", type=float, default=0.0)
    parser.add_argument("--bz-max", type=float, default=5.0)
    parser.add_argument("--bz-step", type=float, default=0.05)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    eps = np.round(np.arange(args.eps_min, args.eps_max + args.eps_step / 2,
                             args.eps_step), 10)
    bz = np.round(np.arange(args.bz_min, args.bz_max + args.bz_step / 2,
                            args.bz_step), 10)
    return cli_main([
        "gainmap",
        "--out", args.out,
        "--epsilon", ",".join(repr(float(e)) for e in eps),
        "--beta-z", ",".join(repr(float(b)) for b in bz),
    ])


if __name__ == "__main__":
    sys.exit(main())
