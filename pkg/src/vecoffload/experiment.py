"""Experiment matrix (schedulers x vehicle counts x seeds) and its artifacts.

Layout under ``output_dir``::

    summary.csv              one row per run, sorted by (scheduler, vehicles, seed)
    aggregate.csv            mean and Student-t 95% half-width per (scheduler, vehicles)
    failures.csv             only when a run raised
    scenarios/n{N}_s{seed}.json
    runs/{scheduler}_n{N}_s{seed}/metrics.json, outcomes.jsonl, windows.jsonl[, convergence.csv]
"""
from __future__ import annotations

import csv
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml
from scipy import stats

from .engine import PSO_KINDS, SCHEDULER_KINDS, ConfigurationError, EngineConfig, RunMetrics, parse_exec_time_mode, run
from .model import ObjectiveWeights
from .pso import ConvergenceTrace, PsoParams
from .workload import Scenario, WorkloadConfig, generate_scenario, load_scenario, save_scenario

OUTPUT_ENV = "VECOFFLOAD_OUT"
DEFAULT_OUTPUT = "results"

SUMMARY_COLUMNS = (
    "scheduler",
    "vehicles",
    "seed",
    "dropped_count",
    "drop_ratio",
    "total_e2e",
    "avg_e2e",
    "total_waiting",
    "avg_waiting",
    "exec_time_s",
    "objective",
)
METRIC_COLUMNS = SUMMARY_COLUMNS[3:]


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


@dataclass(frozen=True)
class ExperimentPlan:
    vehicle_counts: tuple[int, ...] = (50, 100, 200)
    schedulers: tuple[str, ...] = SCHEDULER_KINDS
    seeds: tuple[int, ...] = tuple(range(10))
    workload: dict[str, Any] = field(default_factory=dict)  # WorkloadConfig overrides
    pso: PsoParams = PsoParams()
    engine: EngineConfig = EngineConfig()  # scheduler_kind is replaced per row
    output_dir: Path = field(default_factory=default_output_dir)
    jobs: int = 1

    def __post_init__(self) -> None:
        for name in ("vehicle_counts", "schedulers", "seeds"):
            if not getattr(self, name):
                raise ConfigurationError(f"{name} must be non-empty")
        unknown = [s for s in self.schedulers if s not in SCHEDULER_KINDS]
        if unknown:
            raise ConfigurationError(f"unknown scheduler(s) {unknown}; choose from {', '.join(SCHEDULER_KINDS)}")
        if any(n < 2 for n in self.vehicle_counts):
            raise ConfigurationError("vehicle counts must be >= 2")
        if any(not 0 <= s < 2**64 for s in self.seeds):
            raise ConfigurationError("seeds must be 64-bit unsigned integers")
        bad = {"num_vehicles", "seed"} & set(self.workload)
        if bad:
            raise ConfigurationError(f"workload overrides may not set {sorted(bad)}; use vehicle_counts/seeds")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        # surface bad overrides now rather than inside a worker
        self.workload_config(self.vehicle_counts[0], self.seeds[0])

    def workload_config(self, vehicles: int, seed: int) -> WorkloadConfig:
        try:
            return WorkloadConfig.from_dict({**self.workload, "num_vehicles": vehicles, "seed": seed})
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"workload: {exc}") from None

    def cells(self) -> list[tuple[str, int, int]]:
        return sorted((s, n, seed) for s in self.schedulers for n in self.vehicle_counts for seed in self.seeds)

    def ensure_output_dir(self) -> Path:
        out = Path(self.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"output_dir {out}: {exc}") from None
        if not os.access(out, os.W_OK):
            raise ConfigurationError(f"output_dir {out} is not writable")
        return out


def plan_from_dict(d: dict[str, Any]) -> ExperimentPlan:
    """Build a plan from parsed config text; unknown keys are an error."""
    d = dict(d or {})
    known = set(ExperimentPlan.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown plan keys {sorted(unknown)}")
    kw: dict[str, Any] = {}
    for name in ("vehicle_counts", "schedulers", "seeds"):
        if name in d:
            value = d[name]
            kw[name] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
    if "workload" in d:
        kw["workload"] = dict(d["workload"] or {})
    if "pso" in d:
        try:
            kw["pso"] = PsoParams(**(d["pso"] or {}))
        except TypeError as exc:
            raise ConfigurationError(f"pso: {exc}") from None
    if "engine" in d:
        kw["engine"] = engine_from_dict(d["engine"] or {})
    if d.get("output_dir") is not None:
        kw["output_dir"] = Path(d["output_dir"])
    if "jobs" in d:
        kw["jobs"] = int(d["jobs"])
    try:
        return ExperimentPlan(**kw)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None


def engine_from_dict(d: dict[str, Any]) -> EngineConfig:
    d = dict(d)
    unknown = set(d) - {"exec_time_mode", "fixed_exec_time", "lam"}
    if unknown:
        raise ConfigurationError(f"engine: unknown keys {sorted(unknown)}")
    mode, value = parse_exec_time_mode(str(d.get("exec_time_mode", "measured")))
    if "fixed_exec_time" in d:
        value = float(d["fixed_exec_time"])
    weights = ObjectiveWeights(float(d["lam"])) if "lam" in d else ObjectiveWeights()
    return EngineConfig(exec_time_mode=mode, fixed_exec_time=value, weights=weights)


def load_plan(path: str | Path) -> ExperimentPlan:
    try:
        d = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if d is not None and not isinstance(d, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    return plan_from_dict(d or {})


def run_scenario(scenario: Scenario, scheduler: str, engine: EngineConfig, pso: Optional[PsoParams]) -> RunMetrics:
    engine = replace(engine, scheduler_kind=scheduler)
    return run(scenario, engine, pso if scheduler in PSO_KINDS else None)


def run_dir(out: Path, scheduler: str, vehicles: int, seed: int) -> Path:
    return out / "runs" / f"{scheduler}_n{vehicles}_s{seed}"


def scenario_path(out: Path, vehicles: int, seed: int) -> Path:
    return out / "scenarios" / f"n{vehicles}_s{seed}.json"


def write_run_artifacts(metrics: RunMetrics, where: Path) -> None:
    where.mkdir(parents=True, exist_ok=True)
    (where / "metrics.json").write_text(metrics.to_json())
    (where / "outcomes.jsonl").write_text(metrics.outcomes_jsonl())
    (where / "windows.jsonl").write_text(metrics.windows_jsonl())
    if metrics.convergence:
        ConvergenceTrace(metrics.convergence).to_csv(where / "convergence.csv")


def summary_row(metrics: RunMetrics, vehicles: int, seed: int) -> dict[str, Any]:
    s = metrics.summary()
    row = {k: s[k] for k in METRIC_COLUMNS}
    return {"scheduler": metrics.scheduler, "vehicles": vehicles, "seed": seed, **row}


def _cell(plan: ExperimentPlan, scheduler: str, vehicles: int, seed: int) -> dict[str, Any]:
    out = Path(plan.output_dir)
    scenario = load_scenario(scenario_path(out, vehicles, seed))
    metrics = run_scenario(scenario, scheduler, plan.engine, replace(plan.pso, seed=seed))
    write_run_artifacts(metrics, run_dir(out, scheduler, vehicles, seed))
    return summary_row(metrics, vehicles, seed)


def _safe_cell(args: tuple[ExperimentPlan, str, int, int]) -> tuple[tuple[str, int, int], Any, Optional[str]]:
    plan, scheduler, vehicles, seed = args
    key = (scheduler, vehicles, seed)
    try:
        return key, _cell(plan, scheduler, vehicles, seed), None
    except Exception as exc:  # recorded per row; the caller reports a nonzero status
        return key, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


@dataclass
class ExperimentResult:
    rows: list[dict[str, Any]]
    failures: list[dict[str, Any]]
    output_dir: Path

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(plan: ExperimentPlan) -> ExperimentResult:
    out = plan.ensure_output_dir()
    for n in plan.vehicle_counts:
        for seed in plan.seeds:
            path = scenario_path(out, n, seed)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_scenario(generate_scenario(plan.workload_config(n, seed)), path)
    tasks = [(plan, *c) for c in plan.cells()]
    if plan.jobs > 1:
        with ProcessPoolExecutor(plan.jobs) as pool:
            results = list(pool.map(_safe_cell, tasks))
    else:
        results = [_safe_cell(t) for t in tasks]
    rows, failures = [], []
    for (scheduler, n, seed), row, err in sorted(results, key=lambda r: r[0]):
        if err is None:
            rows.append(row)
        else:
            failures.append({"scheduler": scheduler, "vehicles": n, "seed": seed, "error": err})
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
    agg = aggregate(rows)
    write_csv(out / "aggregate.csv", aggregate_columns(), agg)
    if failures:
        write_csv(out / "failures.csv", ("scheduler", "vehicles", "seed", "error"), failures)
    return ExperimentResult(rows, failures, out)


def write_csv(path: Path, columns: tuple[str, ...], rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in columns})


def _fmt(v: Any) -> Any:
    return repr(v) if isinstance(v, float) else v


def t_half_width(values: list[float], confidence: float = 0.95) -> float:
    """Student-t half-width of the mean's confidence interval; NaN below two samples."""
    n = len(values)
    if n < 2:
        return math.nan
    sd = float(np.std(values, ddof=1))
    return float(stats.t.ppf(0.5 + confidence / 2, n - 1)) * sd / math.sqrt(n)


def aggregate_columns() -> tuple[str, ...]:
    cols = ["scheduler", "vehicles", "runs"]
    for m in METRIC_COLUMNS:
        cols += [f"{m}_mean", f"{m}_ci95"]
    return tuple(cols)


def aggregate(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    groups: dict[tuple[str, int], list[dict[str, Any]]] = {}
    for r in rows:
        groups.setdefault((r["scheduler"], r["vehicles"]), []).append(r)
    out = []
    for (scheduler, n), grp in sorted(groups.items()):
        rec: dict[str, Any] = {"scheduler": scheduler, "vehicles": n, "runs": len(grp)}
        for m in METRIC_COLUMNS:
            vals = [float(r[m]) for r in grp]
            rec[f"{m}_mean"] = math.fsum(vals) / len(vals)
            rec[f"{m}_ci95"] = t_half_width(vals)
        out.append(rec)
    return out


def replay(
    scenario_file: str | Path,
    scheduler: str,
    fixed_exec_time: float = 0.0,
    pso: Optional[PsoParams] = None,
    weights: ObjectiveWeights = ObjectiveWeights(),
) -> RunMetrics:
    """Deterministic re-run of a saved scenario with a configured exec time."""
    if scheduler not in SCHEDULER_KINDS:
        raise ConfigurationError(f"unknown scheduler {scheduler!r}; choose from {', '.join(SCHEDULER_KINDS)}")
    scenario = load_scenario(scenario_file)
    if pso is None:
        pso = PsoParams(seed=scenario.seed or 0)
    engine = EngineConfig(scheduler, "fixed", fixed_exec_time, weights)
    return run_scenario(scenario, scheduler, engine, pso)


def plan_to_dict(plan: ExperimentPlan) -> dict[str, Any]:
    return {
        "vehicle_counts": list(plan.vehicle_counts),
        "schedulers": list(plan.schedulers),
        "seeds": list(plan.seeds),
        "workload": dict(plan.workload),
        "pso": asdict(plan.pso),
        "engine": {
            "exec_time_mode": plan.engine.exec_time_mode,
            "fixed_exec_time": plan.engine.fixed_exec_time,
            "lam": plan.engine.weights.lam,
        },
        "output_dir": str(plan.output_dir),
        "jobs": plan.jobs,
    }
