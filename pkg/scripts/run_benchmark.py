"""Run one named benchmark and print discovered models, libraries and error tables.

Usage: python scripts/run_benchmark.py lorenz_50 [--seed 0] [--duration 5]
"""
import argparse
import json
import logging
import time

from sindy_highnoise.benchmarks import BENCHMARKS, benchmark_config, median_error, summarize, true_libraries
from sindy_highnoise.pipeline import run_full


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("name", choices=sorted(BENCHMARKS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=None)
    ap.add_argument("--json", help="write the summary here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = benchmark_config(args.name, seed=args.seed, duration=args.duration)
    t0 = time.time()
    result = run_full(cfg)
    elapsed = time.time() - t0
    summaries = summarize(result)
    print(f"{args.name} seed={args.seed} ({elapsed:.0f} s)")
    print("true:", true_libraries(result))
    for k, s in enumerate(summaries):
        print(f"-- model {k}")
        if s is None:
            print("   no viable model")
            continue
        for eq in s.equations:
            print("  ", eq)
        print("   raw     ", [{t: round(e, 1) for t, e in row.items()} for row in s.raw_errors])
        print("   closest ", [{t: round(e, 1) for t, e in row.items()} for row in s.closest_errors or []])
        print("   closest libs", s.closest_libraries)
    print(f"median closest error {median_error(summaries):.1f}%")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"elapsed": elapsed, "models": [s.__dict__ if s else None for s in summaries]}, fh, indent=1)


if __name__ == "__main__":
    main()
