"""Tabulate the four weight functions over a log-spaced range of area ratios.

    python3 scripts/weight_curves.py --points 13 --csv curves.csv
"""

import argparse
import csv
import sys

import numpy as np

from editmask.weighting import WeightFunctionKind, evaluate


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=13)
    parser.add_argument("--max-x", type=float, default=1e6)
    parser.add_argument("--csv", help="also write the table here")
    args = parser.parse_args()

    kinds = list(WeightFunctionKind)
    rows = []
    for x in np.logspace(0, np.log10(args.max_x), args.points):
        rows.append([float(x)] + [evaluate(k, float(x)) for k in kinds])

    header = ["x"] + [k.value for k in kinds]
    print("".join(f"{h:>14}" for h in header))
    for row in rows:
        print("".join(f"{v:>14.6g}" for v in row))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
