"""Leading boundary symbols recovered from discrete DN maps under refinement.

For a flat square with ``A = 0`` the probe should give ``beta1 -> 1``; with a
constant tangential connection ``A_1 = i a`` on the edge ``x2 = 0`` it should
give ``beta0 -> a``.  Prints the errors and observed rates.

Usage: python3 scripts/probe_convergence.py [--sizes 16 32 64] [--a 0.2]
"""

import argparse
import math

from gaugelab.bundle_calculus import connection_preset
from gaugelab.elliptic_solver import assemble, dn_matrix
from gaugelab.geometry import build_grid, metric_preset
from gaugelab.symbol_engine import probe_leading_symbols


def probe(n, conn, edge):
    g = build_grid("rectangle", n, n)
    dn = dn_matrix(assemble(g, metric_preset(g, "flat"), connection_preset(g, 1, conn)))
    return probe_leading_symbols(dn, g, edge)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--a", type=float, default=0.2)
    ap.add_argument("--edge", default="x2-")
    args = ap.parse_args()
    print(f"{'n':>5} {'|beta1-1|':>11} {'rate':>6} {'|beta0-a|/a':>12} {'rate':>6}")
    prev = None
    for n in args.sizes:
        e1 = abs(probe(n, "zero", args.edge).beta1[0, 0] - 1)
        e0 = abs(probe(n, f"constant:{args.a},0", args.edge).beta0[0, 0] - args.a) / args.a
        r1 = f"{math.log2(prev[0] / e1):6.2f}" if prev else " " * 6
        r0 = f"{math.log2(prev[1] / e0):6.2f}" if prev else " " * 6
        print(f"{n:5d} {e1:11.3e} {r1} {e0:12.3e} {r0}")
        prev = (e1, e0)


if __name__ == "__main__":
    main()
