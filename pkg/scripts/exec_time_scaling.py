"""Scheduler wall clock of the dynamic CDA and PSO schedulers across vehicle counts.

    python scripts/exec_time_scaling.py --vehicles 50,100,200 --seeds 3
"""
import argparse

import numpy as np

from vecoffload import EngineConfig, PsoParams, WorkloadConfig, generate_scenario, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vehicles", default="50,100,200")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--skip-pso", action="store_true")
    args = ap.parse_args()
    counts = [int(x) for x in args.vehicles.split(",")]
    kinds = ["cda"] if args.skip_pso else ["cda", "on_dyn_pso"]

    table = {k: [] for k in kinds}
    for n in counts:
        for kind in kinds:
            times = []
            for seed in range(args.seeds):
                sc = generate_scenario(WorkloadConfig(num_vehicles=n, seed=seed))
                pso = PsoParams(seed=seed) if kind == "on_dyn_pso" else None
                times.append(run(sc, EngineConfig(kind), pso).scheduler_exec_time)
            table[kind].append(float(np.mean(times)))
            print(f"{kind:12s} N={n:4d} mean exec {table[kind][-1]:.4f}s", flush=True)
    slope = np.polyfit(np.log(counts), np.log(table["cda"]), 1)[0] if len(counts) > 1 else float("nan")
    print(f"cda log-log growth exponent {slope:.2f}")
    if "on_dyn_pso" in table:
        print("pso/cda ratio: " + ", ".join(f"N={n}: {p / c:.0f}x" for n, p, c in zip(counts, table["on_dyn_pso"], table["cda"])))


if __name__ == "__main__":
    main()
