"""Probability that the optimal learning rate is finite, by prior setting.

For the conjugate normal model with an inverse-gamma prior on the variance,
the calibration objective (pooled or pointwise) can be minimized at a finite
learning rate or keep improving as the rate grows without bound.  This script
estimates the probability of a finite optimum over repeated draws of the
training and calibration data, for a panel of prior mean/variance settings,
and writes the table as CSV.

Example:
    python3 scripts/run_interior_probability_table.py --n-rep 10000 \
        --out results/interior_table.csv
"""

import argparse
import sys
import time
from pathlib import Path

from gbcal.oracles import interior_probability_table, write_interior_table_csv

DEFAULT_PRIORS = [(0.5, 0.1), (1.0, 0.1), (4.0, 0.1), (1.0, 1.0), (2.0, 4.0)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10, help="training sample size")
    ap.add_argument("--J", type=int, default=10, help="calibration sample size")
    ap.add_argument("--n-rep", type=int, default=10 ** 4,
                    help="number of simulated dataset pairs per prior")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path,
                    default=Path("results/interior_table.csv"))
    args = ap.parse_args(argv)

    t0 = time.time()
    rows = interior_probability_table(DEFAULT_PRIORS, args.n, args.J,
                                      args.n_rep, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_interior_table_csv(args.out, rows)
    print(f"wrote {args.out} ({time.time() - t0:.0f}s, "
          f"{args.n_rep} replicates per prior)", file=sys.stderr)
    for mu, v, a, b, p_prod, p_elppd, se in rows:
        print(f"prior mean {mu:4.1f} var {v:4.1f}  "
              f"P(finite pointwise optimum) {p_prod:.3f}  "
              f"P(finite predictive-score optimum) {p_elppd:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
