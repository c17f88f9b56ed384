"""Manufactured-solution convergence of the weighted solver.

Solves -div(w grad u) = div(w f) with u* = cos y1 + sin y2, f = -grad u*,
and prints the weighted L2 error and the observed order between refinements.

usage: python3 scripts/convergence_study.py [--beta 0.5] [--mode kernel] [--n 16 32 64 128]
"""

import argparse

import numpy as np

from wickpressure.torus import GridField, TorusGrid, weighted_lp_norm
from wickpressure.weighted_solver import (
    assemble_operator,
    assemble_rhs,
    build_weight,
    sample_faces,
    solve_pde,
)


def error(n, beta, mode, rule):
    grid = TorusGrid(2, n)
    w = build_weight(grid, (0, 0), beta, mode)
    f = sample_faces(grid, [lambda x, y: np.sin(x), lambda x, y: -np.cos(y)])
    rep = solve_pde(assemble_operator(w, rule), assemble_rhs(w, f, rule), tol=1e-12)
    x, y = grid.coords
    return weighted_lp_norm(GridField(grid, rep.u.values - np.cos(x) - np.sin(y)), w.as_field(), 2), rep.iterations


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--mode", default="kernel", choices=["kernel", "power"])
    p.add_argument("--rule", default="geometric", choices=["geometric", "harmonic"])
    p.add_argument("--n", type=int, nargs="+", default=[16, 32, 64, 128])
    args = p.parse_args()
    prev = None
    print(f"{'n':>5} {'error':>11} {'order':>6} {'iters':>6}")
    for n in args.n:
        e, it = error(n, args.beta, args.mode, args.rule)
        order = "" if prev is None else f"{np.log2(prev / e):6.3f}"
        print(f"{n:5d} {e:11.4e} {order:>6} {it:6d}")
        prev = e


if __name__ == "__main__":
    main()
