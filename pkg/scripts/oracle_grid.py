"""Closed-form matrix elements vs the quadrature oracle, cell by cell.

    python3 scripts/oracle_grid.py --nmax 4 --sigma-sq 1 > grid.csv
"""

import argparse
import csv
import itertools
import sys

from dispkey.encryption import EncryptionParams, i_closed_form, i_quadrature_table


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nmax", type=int, default=3)
    ap.add_argument("--sigma-sq", default="0.5,1,2,4")
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--all", action="store_true", help="include cells forbidden by the selection rule")
    args = ap.parse_args(argv)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["sigma_sq", "a", "b", "i", "j", "closed_form", "quadrature", "abs_diff"])
    for s2 in (float(t) for t in args.sigma_sq.split(",")):
        params = EncryptionParams.from_variance(s2)
        quad = i_quadrature_table(args.nmax, params, args.tol)
        for a, b, i, j in itertools.product(range(args.nmax + 1), repeat=4):
            if b - a != j - i and not args.all:
                continue
            closed = i_closed_form(a, b, i, j, params)
            q = float(quad[a, b, i, j])
            out.writerow([s2, a, b, i, j, repr(closed), repr(q), abs(closed - q)])


if __name__ == "__main__":
    main()
