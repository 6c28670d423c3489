"""Cross-validate analytic, simulated and truncated-oracle values on the bundled fixtures.

Usage: python scripts/cross_validate.py [--replicates N] [--seed S] [M1 M2 ...]
"""

import argparse
import json
import sys

from ntbip import fixtures as fx
from ntbip.cli import run_check


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=["M1", "M2", "M3", "M4"])
    ap.add_argument("--replicates", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args(argv)
    ok = True
    for name in args.names:
        warnings: list = []
        res = run_check(fx.fixture(name), name, args.replicates, args.seed, warnings)
        for c in res["checks"]:
            mark = "ok  " if c["passed"] else "FAIL"
            print(f"{mark} {name:3s} {c['name']}: {json.dumps(c['value'])} vs {json.dumps(c['reference'])}")
        for w in warnings:
            print(f"warn {name:3s} {w}")
        ok &= res["passed"]
    return 0 if ok else 3


if __name__ == "__main__":
    sys.exit(main())
