"""Run every suite scenario and print one PASS/FAIL line per scenario.

Usage: python3 scripts/run_suite.py [--out DIR] [--only NAME ...]
"""

import argparse
import time

from gaugelab.cli import SUITE, preset, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="suite_out")
    ap.add_argument("--only", nargs="*", default=None, help="subset of suite names")
    args = ap.parse_args()
    worst = 0
    for spec in args.only or SUITE:
        t0 = time.perf_counter()
        code, rep = run_scenario(preset(spec), f"{args.out}/{spec.replace(':', '_')}")
        failed = [t["task"] for t in rep["tasks"] if not t.get("passed", True)]
        status = "PASS" if code == 0 else "FAIL"
        print(f"{status} {spec:28s} {time.perf_counter() - t0:6.1f}s {'failed: ' + ', '.join(failed) if failed else ''}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
