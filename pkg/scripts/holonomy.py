"""Holonomy around the annulus: closed forms, gauge-pair recovery, refusal.

Usage: python3 scripts/holonomy.py [--n 64] [--alphas 0.25 0.3]
"""

import argparse
import math

import numpy as np

from gaugelab.bundle_calculus import connection_preset, parallel_transport
from gaugelab.cli import build, preset
from gaugelab.geometry import build_grid, metric_preset, trace_curve
from gaugelab.reconstruction import PreconditionError, Scene, recover_holonomy


def loop(g):
    # base point on the outer circle, going around the middle circle
    r = ((g.n1 - 1) // 2) * g.h1
    return trace_curve(g, [(1, 0), (r, 0), (r, 2 * math.pi), (1, 2 * math.pi)])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.25, 0.3])
    args = ap.parse_args()
    g = build_grid("annulus", args.n, args.n)
    met = metric_preset(g, "flat")
    conns = {}
    for a in args.alphas:
        conns[a] = connection_preset(g, 1, f"flat-annulus:{a}")
        P = parallel_transport(g, conns[a], loop(g), 2, method="auto").P[0, 0]
        print(f"alpha {a}: transport {P:.12f}, |P - exp(-2 pi i alpha)| = {abs(P - np.exp(-2j * math.pi * a)):.2e}")
    if len(conns) >= 2:
        a, b = list(conns)[:2]
        try:
            recover_holonomy(Scene(g, met, conns[a]), Scene(g, met, conns[b]), loop(g))
            print("distinct pair: not refused")
        except PreconditionError as exc:
            print(f"distinct pair refused: {exc}")
    bd = build(preset("annulus-gauge-holonomy:1"))
    rep = recover_holonomy(Scene(bd.grid, bd.metric, bd.A), Scene(bd.grid, bd.metric, bd.B), loop(bd.grid))
    print(f"gauge pair: holonomy distance {rep.holonomy_distance:.2e}")


if __name__ == "__main__":
    main()
