#!/usr/bin/env python3
"""Benchmark table: nominal versus robust optimization times.

Times both set-point problems on the bundled topologies (calibrated to
certifiable variants where uniform component values are structurally
infeasible) and writes the timing table as CSV plus a markdown view.

Example:
    python scripts/bench_table.py --reps 10 --out results/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dcropf.harness import BENCH_CASES, bench, bench_to_csv, \
    bench_to_markdown


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", default=",".join(BENCH_CASES),
                    help="comma-separated bundled topology names")
    ap.add_argument("--reps", type=int, default=3,
                    help="repetitions averaged per timing")
    ap.add_argument("--out", default="bench_results",
                    help="output directory for the CSV")
    args = ap.parse_args(argv)

    names = [tok for tok in args.cases.split(",") if tok]
    rows = bench(names, reps=args.reps)
    print(bench_to_markdown(rows), end="")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench_times.csv"
    path.write_text(bench_to_csv(rows))
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
