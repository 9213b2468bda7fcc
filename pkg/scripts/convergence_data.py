"""Best-fitness traces of the offline and online static swarms on one scenario.

Writes a CSV with columns iteration, off_sta_pso, on_sta_pso, ready to plot.

    python scripts/convergence_data.py --vehicles 200 --seed 0 --out conv.csv
"""
import argparse
import csv

from vecoffload import EngineConfig, PsoParams, WorkloadConfig, generate_scenario, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vehicles", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=100)
    ap.add_argument("--exec-time", type=float, default=None, help="fixed exec time; measured when omitted")
    ap.add_argument("--out", default="convergence.csv")
    args = ap.parse_args()

    sc = generate_scenario(WorkloadConfig(num_vehicles=args.vehicles, seed=args.seed))
    params = PsoParams(seed=args.seed, max_iterations=args.iterations)
    traces = {}
    for kind in ("off_sta_pso", "on_sta_pso"):
        engine = EngineConfig(kind) if args.exec_time is None else EngineConfig(kind, "fixed", args.exec_time)
        m = run(sc, engine, params)
        traces[kind] = m.convergence
        print(f"{kind:12s} final fitness {m.best_fitness:.4f}  drops {m.dropped_count}  avg e2e {m.avg_e2e:.3f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", *traces])
        for i, row in enumerate(zip(*traces.values())):
            w.writerow([i, *(repr(v) for v in row)])
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
