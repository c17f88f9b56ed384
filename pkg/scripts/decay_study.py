"""Fit the multiplier decay exponent for a range of alpha and print a table.

usage: python3 scripts/decay_study.py [--dim 2] [--n 256] [--alpha 0.25 0.5 1.0]
"""

import argparse

from wickpressure.pipeline import decay_report


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--alpha", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    p.add_argument("--tolerance", type=float, default=0.15)
    args = p.parse_args()
    print(f"{'alpha':>6} {'slope':>9} {'expected':>9} {'residual':>9}  pass")
    for a in args.alpha:
        r = decay_report(a, args.dim, args.n, args.tolerance)
        print(f"{a:6.3f} {r['slope']:9.4f} {r['expected_slope']:9.4f} {r['residual']:9.2e}  {r['pass']}")


if __name__ == "__main__":
    main()
