"""Command line: ``vecoffload run | replay | generate``.

Exit status: 0 on success, 1 if any run of the matrix failed, 2 on a
usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .engine import SCHEDULER_KINDS, ConfigurationError, parse_exec_time_mode
from .experiment import (
    OUTPUT_ENV,
    ExperimentPlan,
    default_output_dir,
    load_plan,
    plan_to_dict,
    replay,
    run_experiment,
    write_run_artifacts,
)
from .model import InvalidInput
from .workload import ScenarioFormatError, WorkloadConfig, generate_scenario, save_scenario

log = logging.getLogger("vecoffload")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _scheduler_list(text: str) -> tuple[str, ...]:
    kinds = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [k for k in kinds if k not in SCHEDULER_KINDS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown scheduler {bad[0]!r}; choose from {', '.join(SCHEDULER_KINDS)}")
    return kinds


def _scheduler(text: str) -> str:
    if text not in SCHEDULER_KINDS:
        raise argparse.ArgumentTypeError(f"unknown scheduler {text!r}; choose from {', '.join(SCHEDULER_KINDS)}")
    return text


def _exec_mode(text: str) -> tuple[str, float]:
    try:
        return parse_exec_time_mode(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vecoffload", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment matrix")
    r.add_argument("--config", type=Path, help="YAML plan; flags below override it")
    r.add_argument("--vehicles", type=_int_list, help="e.g. 50,100,200")
    r.add_argument("--scheduler", type=_scheduler_list, help=f"subset of {','.join(SCHEDULER_KINDS)}")
    r.add_argument("--seed", type=_int_list, help="e.g. 0,1,2")
    r.add_argument("--exec-time-mode", type=_exec_mode, help="measured | fixed | fixed:<seconds>")
    r.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    r.add_argument("--jobs", type=int, help="worker processes")
    r.add_argument("--dump-plan", action="store_true", help="print the resolved plan and exit")

    rp = sub.add_parser("replay", help="re-run a saved scenario with a fixed exec time")
    rp.add_argument("scenario", type=Path)
    rp.add_argument("--scheduler", type=_scheduler, required=True)
    rp.add_argument("--fixed-exec-time", type=float, default=0.0)
    rp.add_argument("--out", type=Path, help="directory for metrics.json and logs (default: print metrics)")

    g = sub.add_parser("generate", help="write a scenario file")
    g.add_argument("--vehicles", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", type=Path, help="YAML plan whose workload overrides apply")
    g.add_argument("--out", type=Path, required=True)
    return p


def resolve_plan(args: argparse.Namespace) -> ExperimentPlan:
    plan = load_plan(args.config) if args.config else ExperimentPlan()
    changes = {}
    if args.vehicles:
        changes["vehicle_counts"] = args.vehicles
    if args.scheduler:
        changes["schedulers"] = args.scheduler
    if args.seed:
        changes["seeds"] = args.seed
    if args.exec_time_mode:
        mode, value = args.exec_time_mode
        changes["engine"] = replace(plan.engine, exec_time_mode=mode, fixed_exec_time=value)
    if args.out:
        changes["output_dir"] = args.out
    elif not args.config:
        changes["output_dir"] = default_output_dir()
    if args.jobs:
        changes["jobs"] = args.jobs
    return replace(plan, **changes) if changes else plan


def cmd_run(args: argparse.Namespace) -> int:
    plan = resolve_plan(args)
    if args.dump_plan:
        print(json.dumps(plan_to_dict(plan), indent=1, sort_keys=True))
        return 0
    log.info("%d runs -> %s", len(plan.cells()), plan.output_dir)
    result = run_experiment(plan)
    for f in result.failures:
        print(f"FAILED {f['scheduler']} n={f['vehicles']} seed={f['seed']}: {f['error'].splitlines()[0]}", file=sys.stderr)
    print(f"{len(result.rows)} rows written to {result.output_dir / 'summary.csv'}")
    return 0 if result.ok else 1


def cmd_replay(args: argparse.Namespace) -> int:
    metrics = replay(args.scenario, args.scheduler, args.fixed_exec_time)
    if args.out:
        write_run_artifacts(metrics, args.out)
    else:
        sys.stdout.write(metrics.to_json())
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    overrides = load_plan(args.config).workload if args.config else {}
    config = WorkloadConfig.from_dict({**overrides, "num_vehicles": args.vehicles, "seed": args.seed})
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(generate_scenario(config), args.out)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {"run": cmd_run, "replay": cmd_replay, "generate": cmd_generate}
    try:
        return handlers[args.command](args)
    except (ConfigurationError, ScenarioFormatError, InvalidInput, OSError) as exc:
        print(f"vecoffload: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
