"""Run an experiment plan and print the per-(scheduler, vehicles) means.

    python scripts/run_matrix.py configs/smoke.yaml
"""
import argparse
import sys
from dataclasses import replace

from vecoffload.experiment import aggregate, load_plan, run_experiment

COLUMNS = ("dropped_count", "avg_e2e", "avg_waiting", "exec_time_s", "objective")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--jobs", type=int)
    args = ap.parse_args()
    plan = load_plan(args.config)
    if args.jobs:
        plan = replace(plan, jobs=args.jobs)
    result = run_experiment(plan)

    print(f"{'scheduler':12s} {'N':>4s} " + " ".join(f"{c:>14s}" for c in COLUMNS))
    for rec in aggregate(result.rows):
        vals = " ".join(f"{rec[c + '_mean']:14.4f}" for c in COLUMNS)
        print(f"{rec['scheduler']:12s} {rec['vehicles']:4d} {vals}")
    for f in result.failures:
        print(f"FAILED {f['scheduler']} n={f['vehicles']} seed={f['seed']}", file=sys.stderr)
    print(f"artifacts in {result.output_dir}")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
