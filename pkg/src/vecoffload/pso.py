"""Random-key particle swarm over task orders, and the three PSO regimes.

A particle's position holds one real key per task; sorting the keys gives
a priority order, which ``replay_priority`` turns into a schedule (each
task goes to the earliest-available server). The three regimes differ
only in what is known when the swarm runs and when its execution time is
paid:

* offline static: whole workload known up front, execution time not charged;
* online static: nothing starts until every task has arrived and the swarm
  has finished;
* online dynamic: one swarm per decision window, its run time delays the
  chosen task.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .engine import (
    EngineConfig,
    RunMetrics,
    Timeline,
    bootstrap,
    build_window,
    replay_priority,
    run_dynamic,
    summarize,
)
from .model import InvalidInput, ObjectiveWeights, Task, earliest_available, objective_value
from .schedulers import DecisionWindow, SchedulerDecision, schedule_cda
from .workload import Scenario

FITNESS_KINDS = ("busy_time", "drop_first", "objective")

SEED_RULES = ("cda", "arrival", "deadline", "slack", "shortest")
_STATIC_RULES = {
    "arrival": lambda t: t.arrival_time,
    "deadline": lambda t: t.deadline,
    "slack": lambda t: t.deadline - t.processing_time,
    "shortest": lambda t: t.processing_time,
}


@dataclass(frozen=True)
class PsoParams:
    swarm_size: int = 50
    max_iterations: int = 100
    cognitive_coeff: float = 1.49
    social_coeff: float = 1.49
    inertia: float = 0.729
    seed: int = 0
    velocity_clamp: float = 1.0
    fitness_kind: str = "busy_time"  # static regimes
    window_fitness_kind: str = "drop_first"  # per-window swarms of the dynamic regime
    # leading rows of the initial swarm replaced by greedy orders, see SEED_RULES
    heuristic_seeds: int = 5
    # window swarms stop after this many iterations without improvement; None runs them to max_iterations
    window_stall_iterations: Optional[int] = 20

    def __post_init__(self) -> None:
        if self.swarm_size < 2:
            raise InvalidInput("swarm_size must be >= 2")
        if self.max_iterations < 0:
            raise InvalidInput("max_iterations must be >= 0")
        if not (self.cognitive_coeff > 0 and self.social_coeff > 0):
            raise InvalidInput("coefficients must be positive")
        if not 0 < self.inertia <= 1:
            raise InvalidInput("inertia must lie in (0, 1]")
        if not self.velocity_clamp > 0:
            raise InvalidInput("velocity_clamp must be positive")
        if self.window_stall_iterations is not None and self.window_stall_iterations < 1:
            raise InvalidInput("window_stall_iterations must be >= 1 or None")
        if not 0 <= self.heuristic_seeds <= len(SEED_RULES):
            raise InvalidInput(f"heuristic_seeds must lie in [0, {len(SEED_RULES)}]")
        if self.fitness_kind not in FITNESS_KINDS or self.window_fitness_kind not in FITNESS_KINDS:
            raise InvalidInput(f"fitness_kind must be one of {FITNESS_KINDS}")


@dataclass
class ConvergenceTrace:
    best_fitness: list[float] = field(default_factory=list)

    def is_non_increasing(self) -> bool:
        return all(b <= a for a, b in zip(self.best_fitness, self.best_fitness[1:]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "best_fitness"])
            for i, v in enumerate(self.best_fitness):
                w.writerow([i, repr(v)])


class PsoResult(NamedTuple):
    order: list[Task]
    fitness: float
    trace: ConvergenceTrace


@dataclass
class FitnessContext:
    """What an order is scored against.

    ``tasks`` are the tasks being ordered (arrival-sorted); ``base`` is the
    server state before any of them runs and is forked per evaluation.
    ``fixed`` are tasks already resolved on ``base`` that still count in
    the score (the bootstrap pair of the static regimes).
    """

    tasks: tuple[Task, ...]
    base: Timeline
    fixed: tuple[Task, ...] = ()
    not_before: float = 0.0
    exec_time: float = 0.0  # online mode: delays the first start
    weights: ObjectiveWeights = ObjectiveWeights()
    kind: str = "drop_first"

    def __post_init__(self) -> None:
        self.tasks = tuple(sorted(self.tasks, key=lambda t: (t.arrival_time, t.id)))
        self._range_total = math.fsum(t.range_window for t in self.tasks + self.fixed)
        # per-server busy time of the scored tasks: the makespan lower bound
        self._busy_time = math.fsum(t.processing_time for t in self.tasks + self.fixed) / len(self.base.servers)


def decode(position: Sequence[float], tasks: Sequence[Task]) -> list[Task]:
    """Tasks sorted by ascending key; equal keys keep the lower id first."""
    if len(position) != len(tasks):
        raise InvalidInput(f"{len(position)} keys for {len(tasks)} tasks")
    return [t for _, _, t in sorted(zip(position, (t.id for t in tasks), tasks), key=lambda x: (x[0], x[1]))]


def schedule_order(order: Sequence[Task], ctx: FitnessContext) -> Timeline:
    rank = {t.id: i for i, t in enumerate(order)}
    if len(rank) != len(ctx.tasks) or any(t.id not in rank for t in ctx.tasks):
        raise InvalidInput("order is not a permutation of the context's tasks")
    return replay_priority(ctx.tasks, rank, ctx.base.fork(), ctx.not_before, ctx.exec_time)


def score_timeline(tl: Timeline, ctx: FitnessContext) -> float:
    scored = ctx.fixed + ctx.tasks
    if ctx.kind == "objective":
        return objective_value(tl.outcomes(scored), ctx.weights)
    lam = ctx.weights.lam
    drops = sum(1 for t in scored if t.id in tl.dropped)
    if ctx.kind == "busy_time":
        # latency in units of the makespan lower bound, drops as a count
        return (1.0 - lam) * drops + lam * tl.latency_sum(scored) / ctx._busy_time
    # Every extra drop outweighs the whole latency term, which is < lam.
    return (1.0 - lam) * drops + lam * tl.latency_sum(scored) / ctx._range_total


def fitness(order: Sequence[Task], ctx: FitnessContext) -> float:
    return score_timeline(schedule_order(order, ctx), ctx)


def cda_order(ctx: FitnessContext) -> list[Task]:
    """Order in which the cost-driven selector would start the context's tasks."""
    tl = ctx.base.fork()
    tasks = ctx.tasks
    started: list[Task] = []
    arrived: list[Task] = []
    ptr, n = 0, len(tasks)
    exec_left = ctx.exec_time
    while ptr < n or arrived:
        server, t_e = earliest_available(tl.servers)
        decision = max(t_e, ctx.not_before)
        if not arrived and tasks[ptr].arrival_time > decision:
            decision = tasks[ptr].arrival_time
        while ptr < n and tasks[ptr].arrival_time <= decision:
            arrived.append(tasks[ptr])
            ptr += 1
        window = build_window(arrived, decision, decision, tl.comm_estimate, exec_left)
        for task in arrived:
            if task.id in window.excluded_infeasible:
                tl.drop(task, "window")
        arrived = list(window.eligible)
        if not arrived:
            continue
        chosen = next(t for t in arrived if t.id == schedule_cda(window, decision).chosen_task_id)
        arrived.remove(chosen)
        if tl.commit(chosen, server, decision + exec_left):
            started.append(chosen)
        else:
            tl.drop(chosen, "deadline")
        exec_left = 0.0
    seen = {t.id for t in started}
    return started + [t for t in tasks if t.id not in seen]


def order_keys(tasks: Sequence[Task], order: Sequence[Task]) -> np.ndarray:
    """Evenly spaced keys in [0, 1] that decode back to ``order``."""
    index = {t.id: i for i, t in enumerate(tasks)}
    keys = np.empty(len(tasks))
    keys[[index[t.id] for t in order]] = np.linspace(0.0, 1.0, len(tasks))
    return keys


def seed_order(ctx: FitnessContext, rule: str) -> list[Task]:
    if rule == "cda":
        return cda_order(ctx)
    key = _STATIC_RULES[rule]
    return sorted(ctx.tasks, key=lambda t: (key(t), t.arrival_time, t.id))


def pso_run(ctx: FitnessContext, params: PsoParams, seed: Optional[int] = None, stall: Optional[int] = None) -> PsoResult:
    """Standard inertia-weight PSO; the global best is updated once per iteration.

    With ``stall`` the run stops once the global best has not improved for
    that many iterations, and the trace is as long as the iterations run.
    """
    rng = np.random.default_rng(params.seed if seed is None else seed)
    tasks = ctx.tasks
    dim = len(tasks)
    if dim == 0:
        raise InvalidInput("nothing to order")
    if dim == 1:
        f = fitness(list(tasks), ctx)
        return PsoResult(list(tasks), f, ConvergenceTrace([f]))

    ids = np.array([t.id for t in tasks])
    cache: dict[tuple[int, ...], float] = {}

    def evaluate(row: np.ndarray) -> float:
        perm = tuple(np.lexsort((ids, row)).tolist())
        f = cache.get(perm)
        if f is None:
            f = fitness([tasks[i] for i in perm], ctx)
            cache[perm] = f
        return f

    n = params.swarm_size
    pos = rng.uniform(0.0, 1.0, (n, dim))
    vel = rng.uniform(-0.5, 0.5, (n, dim))
    for row, rule in enumerate(SEED_RULES[: min(params.heuristic_seeds, n)]):
        pos[row] = order_keys(tasks, seed_order(ctx, rule))
    fit = np.array([evaluate(p) for p in pos])
    pbest, pbest_fit = pos.copy(), fit.copy()
    g = int(np.argmin(pbest_fit))
    gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])
    trace = [gbest_fit]
    # Once every order has been scored the global best cannot move again.
    space = math.factorial(dim) if dim <= 10 else None
    w, c1, c2, vmax = params.inertia, params.cognitive_coeff, params.social_coeff, params.velocity_clamp
    last_gain = 0
    for it in range(params.max_iterations):
        if stall is not None and it - last_gain >= stall:
            break
        if space is not None and len(cache) == space:
            trace.extend([gbest_fit] * (params.max_iterations - it))
            break
        r1 = rng.random((n, dim))
        r2 = rng.random((n, dim))
        vel = w * vel + c1 * r1 * (pbest - pos) + c2 * r2 * (gbest - pos)
        np.clip(vel, -vmax, vmax, out=vel)
        pos = pos + vel
        fit = np.array([evaluate(p) for p in pos])
        better = fit < pbest_fit
        pbest[better] = pos[better]
        pbest_fit[better] = fit[better]
        g = int(np.argmin(pbest_fit))
        if pbest_fit[g] < gbest_fit:
            gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])
            last_gain = it + 1
        trace.append(gbest_fit)
    return PsoResult(decode(gbest, tasks), gbest_fit, ConvergenceTrace(trace))


def _charged(engine: EngineConfig, measured: float) -> float:
    return measured if engine.measured else engine.fixed_exec_time


def run_off_sta_pso(scenario: Scenario, params: PsoParams, engine: EngineConfig = EngineConfig("off_sta_pso")) -> RunMetrics:
    """Whole workload known in advance; the bootstrap pair starts on arrival."""
    base = Timeline(scenario.channel, scenario.num_servers)
    nb = bootstrap(base, scenario.tasks)
    rest = scenario.tasks[nb:]
    ctx = FitnessContext(rest, base, scenario.tasks[:nb], weights=engine.weights, kind=params.fitness_kind)
    t0 = time.perf_counter()
    if rest:
        result = pso_run(ctx, params)
        order, best, trace = result.order, result.fitness, result.trace.best_fitness
    else:
        order, best = [], score_timeline(base, ctx)
        trace = [best]
    elapsed = time.perf_counter() - t0
    tl = schedule_order(order, ctx) if rest else base
    return summarize("off_sta_pso", scenario, tl, engine, _charged(engine, elapsed), None, trace, best)


def run_on_sta_pso(scenario: Scenario, params: PsoParams, engine: EngineConfig = EngineConfig("on_sta_pso")) -> RunMetrics:
    """Nothing starts before the last arrival plus the swarm's own run time."""
    last = scenario.tasks[-1].arrival_time

    def context(release: float) -> FitnessContext:
        base = Timeline(scenario.channel, scenario.num_servers, release_time=release)
        return FitnessContext(scenario.tasks, base, weights=engine.weights, kind=params.fitness_kind)

    # the search can only assume the configured exec time; the real one is known afterwards
    t0 = time.perf_counter()
    result = pso_run(context(last + engine.exec_estimate), params)
    elapsed = time.perf_counter() - t0
    eps = _charged(engine, elapsed)
    tl = schedule_order(result.order, context(last + eps))
    return summarize(
        "on_sta_pso", scenario, tl, engine, eps, None, result.trace.best_fitness, result.fitness
    )


class WindowPso:
    """Per-window scheduler: optimise the window's full order, start its head."""

    def __init__(self, timeline: Timeline, engine: EngineConfig, params: PsoParams):
        self.timeline = timeline
        self.engine = engine
        self.params = params
        self.exec_estimate = engine.exec_estimate
        self.last_extra: dict = {}
        self._seeds = np.random.SeedSequence(params.seed)

    def window_context(self, window: DecisionWindow, t_e_av: float) -> FitnessContext:
        return FitnessContext(
            window.eligible,
            self.timeline,
            not_before=t_e_av,
            exec_time=self.exec_estimate,
            weights=self.engine.weights,
            kind=self.params.window_fitness_kind,
        )

    def __call__(self, window: DecisionWindow, t_e_av: float) -> Optional[SchedulerDecision]:
        if not window.eligible:
            return None
        t0 = time.perf_counter()
        ctx = self.window_context(window, t_e_av)
        seed = int(self._seeds.spawn(1)[0].generate_state(1)[0])
        result = pso_run(ctx, self.params, seed=seed, stall=self.params.window_stall_iterations)
        head = result.order[0]
        self.last_extra = {"pso_trace": result.trace.best_fitness, "pso_order": [t.id for t in result.order]}
        if self.engine.measured:
            self.exec_estimate = time.perf_counter() - t0
        return SchedulerDecision(head.id, window.target_server, result.fitness, {head.id: result.fitness})


def run_on_dyn_pso(scenario: Scenario, params: PsoParams, engine: EngineConfig = EngineConfig("on_dyn_pso")) -> RunMetrics:
    tl, windows, exec_total = run_dynamic(scenario, lambda tl, eng: WindowPso(tl, eng, params), engine)
    return summarize("on_dyn_pso", scenario, tl, engine, exec_total, windows)


REGIMES = {
    "off_sta_pso": run_off_sta_pso,
    "on_sta_pso": run_on_sta_pso,
    "on_dyn_pso": run_on_dyn_pso,
}
