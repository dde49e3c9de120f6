"""Encrypted trace distance against the security bound over a range of sigma^2.

Prints a CSV with one row per (pair, sigma^2). The superposition pair shows
the ~0.4/sigma decay that eventually overtakes the 1/sigma^2 bound.

    python3 scripts/sigma_sweep.py --sigma-sq 4,16,64,256
"""

import argparse
import csv
import math
import sys

from dispkey.encryption import EncryptionParams, encrypted_distance
from dispkey.experiments import single_mode_preset

PAIRS = [("fock:0", "fock:1"), ("plus:1", "minus:1")]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma-sq", default="2,4,8,16,32,64,128,256")
    ap.add_argument("--tail-eps", type=float, default=1e-10)
    args = ap.parse_args(argv)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["stateA", "stateB", "sigma_sq", "measured", "error", "bound", "measured_times_sigma", "measured_times_sigma_sq", "cutoff"])
    for s2 in (float(t) for t in args.sigma_sq.split(",")):
        params = EncryptionParams.from_variance(s2, args.tail_eps)
        for a, b in PAIRS:
            rep = encrypted_distance(single_mode_preset(a), single_mode_preset(b), params)
            out.writerow([a, b, s2, repr(rep.measured), repr(rep.error), rep.bound, rep.measured * math.sqrt(s2), rep.measured * s2, rep.cutoff])
            sys.stdout.flush()


if __name__ == "__main__":
    main()
