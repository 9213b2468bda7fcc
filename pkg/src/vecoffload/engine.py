"""Event-driven executor shared by every regime.

The ``Timeline`` is the single place where a task is placed on a server:
it derives waiting, downlink and end-to-end latency, enforces the
coverage deadline and keeps server intervals disjoint. The windowed loop
(``run_dynamic``) drives the online policies; ``replay_priority`` scores a
fixed priority order and backs both the static PSO regimes and the PSO
fitness.
"""
from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

from .model import (
    ChannelParams,
    ConsistencyError,
    InvalidInput,
    MecState,
    ObjectiveWeights,
    Task,
    TaskOutcome,
    bandwidth_share,
    drop_ratio,
    dropped_count,
    earliest_available,
    is_assignable,
    meets_window_deadline,
    objective_value,
    transmission_rate,
    transmission_time,
    waiting_time,
)
from .schedulers import POLICIES, DecisionWindow, Scheduler, SchedulerDecision
from .workload import SIMULTANEITY_EPS, Scenario

PSO_KINDS = ("off_sta_pso", "on_sta_pso", "on_dyn_pso")
SCHEDULER_KINDS = ("fcfs", "sdf", "cda") + PSO_KINDS


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    scheduler_kind: str = "cda"
    exec_time_mode: str = "measured"  # or "fixed"
    fixed_exec_time: float = 0.0
    weights: ObjectiveWeights = ObjectiveWeights()

    def __post_init__(self) -> None:
        if self.scheduler_kind not in SCHEDULER_KINDS:
            raise ConfigurationError(
                f"unknown scheduler {self.scheduler_kind!r}; choose from {', '.join(SCHEDULER_KINDS)}"
            )
        if self.exec_time_mode not in ("measured", "fixed"):
            raise ConfigurationError("exec_time_mode must be 'measured' or 'fixed'")
        if self.fixed_exec_time < 0:
            raise ConfigurationError("fixed exec time must be >= 0")

    @property
    def measured(self) -> bool:
        return self.exec_time_mode == "measured"

    @property
    def exec_estimate(self) -> float:
        """Exec time assumed before a decision is made."""
        return 0.0 if self.measured else self.fixed_exec_time


def parse_exec_time_mode(text: str) -> tuple[str, float]:
    """'measured' | 'fixed' | 'fixed:<seconds>' -> (mode, seconds)."""
    if text == "measured":
        return "measured", 0.0
    if text == "fixed":
        return "fixed", 0.0
    if text.startswith("fixed:"):
        try:
            value = float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigurationError(f"bad exec time {text!r}") from None
        return "fixed", value
    raise ConfigurationError(f"bad exec time mode {text!r}; use measured, fixed or fixed:<seconds>")


class Timeline:
    """Server clocks and the committed schedule of one run."""

    def __init__(self, channel: ChannelParams, num_servers: int, release_time: float = 0.0):
        self.channel = channel
        self.servers = [MecState(j, release_time) for j in range(num_servers)]
        self.full_rate = transmission_rate(channel.effective_bandwidth_hz, channel)
        # task_id -> [task, server, start, downlink]
        self.slots: dict[int, list] = {}
        self.dropped: dict[int, str] = {}
        self._finishing: dict[int, list[int]] = {}  # completion-time bucket -> task ids
        self.last_start: float = release_time
        self._lone: dict[int, float] = {}  # shared by forks, depends only on the task

    def fork(self) -> "Timeline":
        """Cheap copy for what-if replays.

        Records are replaced, never mutated, so shallow dict copies suffice.
        Server logs keep only their last interval (enough for overlap checks).
        """
        other = Timeline.__new__(Timeline)
        other.channel = self.channel
        other.servers = [MecState(s.server_id, s.available_at, s.assignment_log[-1:]) for s in self.servers]
        other.full_rate = self.full_rate
        other.slots = dict(self.slots)
        other.dropped = dict(self.dropped)
        other._finishing = dict(self._finishing)
        other.last_start = self.last_start
        other._lone = self._lone
        return other

    def lone_downlink(self, task: Task) -> float:
        dl = self._lone.get(task.id)
        if dl is None:
            dl = 0.0 if task.result_size_bits == 0 else transmission_time(task.result_size_bits, self.full_rate)
            self._lone[task.id] = dl
        return dl

    def comm_estimate(self, task: Task) -> float:
        """Uplink plus a downlink that does not share the band."""
        return task.uplink_time + self.lone_downlink(task)

    @staticmethod
    def e2e(task: Task, start: float, downlink: float) -> float:
        # hot path of every replay: same arithmetic as model.e2e_latency, fewer checks
        wait = start - task.arrival_time
        if wait < 0:
            waiting_time(start, task.arrival_time)  # raises
        return task.processing_time + wait + task.uplink_time + downlink

    def _bucket(self, t: float) -> int:
        return math.floor(t / SIMULTANEITY_EPS)

    def _co_finishers(self, end: float) -> list[int]:
        b = self._bucket(end)
        out = []
        for k in (b - 1, b, b + 1):
            for tid in self._finishing.get(k, ()):
                slot = self.slots[tid]
                if abs(slot[2] + slot[0].processing_time - end) <= SIMULTANEITY_EPS:
                    out.append(tid)
        return out

    def commit(self, task: Task, server: int, start: float) -> bool:
        """Place ``task`` on ``server`` at ``start`` if its deadline allows.

        Results of tasks finishing at the same instant share the downlink
        band in proportion to size; a newcomer that would push an earlier
        co-finisher past its deadline is refused.
        """
        if task.id in self.slots or task.id in self.dropped:
            raise ConsistencyError(f"task {task.id} scheduled twice")
        end = start + task.processing_time
        group = self._co_finishers(end) if task.result_size_bits > 0 else []
        if not group:
            downlink = self.lone_downlink(task)
            if not is_assignable(self.e2e(task, start, downlink), task.range_window):
                return False
            updates = {}
        else:
            members = [self.slots[tid] for tid in group]
            sizes = [m[0].result_size_bits for m in members] + [task.result_size_bits]
            bw = self.channel.effective_bandwidth_hz
            new_times = [
                transmission_time(sizes[i], transmission_rate(bandwidth_share(sizes, bw, i), self.channel))
                for i in range(len(sizes))
            ]
            for m, dl in zip(members, new_times):
                if not is_assignable(self.e2e(m[0], m[2], dl), m[0].range_window):
                    return False
            downlink = new_times[-1]
            if not is_assignable(self.e2e(task, start, downlink), task.range_window):
                return False
            updates = dict(zip(group, new_times[:-1]))
        advance_after_assignment(self.servers, server, task.id, start, task.processing_time)
        for tid, dl in updates.items():
            slot = list(self.slots[tid])  # forks share records
            slot[3] = dl
            self.slots[tid] = slot
        self.slots[task.id] = [task, server, start, downlink]
        if task.result_size_bits > 0:
            b = self._bucket(end)
            self._finishing[b] = [*self._finishing.get(b, ()), task.id]
        self.last_start = start
        return True

    def drop(self, task: Task, reason: str) -> None:
        if task.id in self.slots or task.id in self.dropped:
            raise ConsistencyError(f"task {task.id} resolved twice")
        self.dropped[task.id] = reason

    def outcome(self, task: Task) -> TaskOutcome:
        if task.id in self.slots:
            _, server, start, downlink = self.slots[task.id]
            return TaskOutcome(
                task_id=task.id,
                assigned_mec=server,
                start_processing_time=start,
                waiting_time=waiting_time(start, task.arrival_time),
                uplink_time=task.uplink_time,
                downlink_time=downlink,
                e2e_latency=self.e2e(task, start, downlink),
            )
        if task.id in self.dropped:
            return TaskOutcome(
                task_id=task.id,
                assigned_mec=None,
                uplink_time=task.uplink_time,
                dropped=True,
                drop_reason=self.dropped[task.id],
            )
        raise ConsistencyError(f"task {task.id} was never resolved")

    def outcomes(self, tasks: Iterable[Task]) -> list[TaskOutcome]:
        return [self.outcome(t) for t in tasks]

    def latency_sum(self, tasks: Iterable[Task]) -> float:
        return math.fsum(
            self.e2e(t, self.slots[t.id][2], self.slots[t.id][3]) for t in tasks if t.id in self.slots
        )


def advance_after_assignment(
    servers: list[MecState], server: int, task_id: int, start: float, processing_time: float
) -> float:
    """Occupy ``server`` for the task and return the new earliest availability."""
    servers[server].assign(task_id, start, start + processing_time)
    return earliest_available(servers)[1]


def bootstrap(timeline: Timeline, tasks: Sequence[Task]) -> int:
    """Start the first tasks (one per server) at their arrival; returns how many were consumed."""
    n = min(len(timeline.servers), len(tasks))
    for j in range(n):
        task = tasks[j]
        if not timeline.commit(task, j, task.arrival_time):
            timeline.drop(task, "deadline")
    return n


def build_window(
    pending: Sequence[Task],
    t_e_av: float,
    span_start: float,
    comm_time: Optional[Callable[[Task], float]] = None,
    exec_time: float = 0.0,
    window_index: int = 0,
    target_server: int = 0,
) -> DecisionWindow:
    """Split arrived pending tasks into eligible and deadline-infeasible.

    Tasks arriving after ``t_e_av`` are left out of both lists.
    """
    if t_e_av < span_start:
        raise InvalidInput("window ends before it starts")
    comm = comm_time or (lambda t: t.uplink_time)
    decision = t_e_av + exec_time
    eligible, excluded = [], []
    for task in pending:
        if task.arrival_time > t_e_av:
            continue
        if meets_window_deadline(task, decision, comm(task)):
            eligible.append(task)
        else:
            excluded.append(task.id)
    return DecisionWindow(window_index, span_start, t_e_av, tuple(eligible), tuple(excluded), target_server)


@dataclass
class WindowRecord:
    window_index: int
    decision_time: float
    span_start: float
    eligible: list[int]
    excluded_infeasible: list[int]
    decision: SchedulerDecision
    exec_time: float
    start_time: float
    committed: bool
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_exec: bool = True) -> dict[str, Any]:
        d = {
            "window_index": self.window_index,
            "decision_time": self.decision_time,
            "span_start": self.span_start,
            "eligible": self.eligible,
            "excluded_infeasible": self.excluded_infeasible,
            "start_time": self.start_time,
            "committed": self.committed,
            **self.decision.to_dict(),
        }
        if include_exec:
            d["exec_time"] = self.exec_time
        d.update(self.extra)
        return d


def run_dynamic(
    scenario: Scenario,
    make_scheduler: Callable[[Timeline, EngineConfig], Scheduler],
    engine: EngineConfig,
) -> tuple[Timeline, list[WindowRecord], float]:
    """Bootstrap, then one windowed decision per freed server slot until every task is resolved."""
    tasks = scenario.tasks
    tl = Timeline(scenario.channel, scenario.num_servers)
    scheduler = make_scheduler(tl, engine)
    ptr = bootstrap(tl, tasks)
    span_start = tl.last_start
    arrived: list[Task] = []
    windows: list[WindowRecord] = []
    exec_total = 0.0
    n = len(tasks)
    while ptr < n or arrived:
        server, t_e = earliest_available(tl.servers)
        decision_time = t_e
        if not arrived and tasks[ptr].arrival_time > decision_time:
            decision_time = tasks[ptr].arrival_time  # idle until the next arrival
        while ptr < n and tasks[ptr].arrival_time <= decision_time:
            arrived.append(tasks[ptr])
            ptr += 1
        window = build_window(
            arrived,
            decision_time,
            min(span_start, decision_time),
            tl.comm_estimate,
            engine.exec_estimate,
            len(windows),
            server,
        )
        if window.excluded_infeasible:
            gone = set(window.excluded_infeasible)
            for task in arrived:
                if task.id in gone:
                    tl.drop(task, "window")
        arrived = list(window.eligible)
        if not arrived:
            continue
        t0 = time.perf_counter()
        decision = scheduler(window, decision_time)
        elapsed = time.perf_counter() - t0
        if decision is None:
            raise ConsistencyError("scheduler returned no decision for a non-empty window")
        eps = elapsed if engine.measured else engine.fixed_exec_time
        exec_total += eps
        chosen = next(t for t in arrived if t.id == decision.chosen_task_id)
        start = decision_time + eps
        committed = tl.commit(chosen, server, start)
        if committed:
            span_start = start
        else:
            tl.drop(chosen, "deadline")
        arrived.remove(chosen)
        extra = getattr(scheduler, "last_extra", None) or {}
        windows.append(
            WindowRecord(
                window.window_index,
                decision_time,
                window.span_start,
                [t.id for t in window.eligible],
                list(window.excluded_infeasible),
                decision,
                eps,
                start,
                committed,
                dict(extra),
            )
        )
    return tl, windows, exec_total


def replay_priority(
    tasks: Sequence[Task],
    rank: dict[int, int],
    timeline: Timeline,
    not_before: float = 0.0,
    first_exec: float = 0.0,
) -> Timeline:
    """Work-conserving list schedule of ``tasks`` (arrival-sorted) on ``timeline``.

    Whenever a server frees, the arrived feasible task with the smallest
    rank starts on it; if nothing has arrived the server idles until the
    next arrival. ``first_exec`` delays only the first start. Mutates and
    returns ``timeline``.
    """
    heap: list[tuple[int, int, int]] = []
    ptr, n = 0, len(tasks)
    exec_left = first_exec
    while ptr < n or heap:
        server, t_e = earliest_available(timeline.servers)
        decision = max(t_e, not_before)
        if not heap and tasks[ptr].arrival_time > decision:
            decision = tasks[ptr].arrival_time
        while ptr < n and tasks[ptr].arrival_time <= decision:
            heapq.heappush(heap, (rank[tasks[ptr].id], tasks[ptr].id, ptr))
            ptr += 1
        chosen = None
        while heap:
            _, _, idx = heapq.heappop(heap)
            task = tasks[idx]
            if meets_window_deadline(task, decision + exec_left, timeline.comm_estimate(task)):
                chosen = task
                break
            timeline.drop(task, "window")
        if chosen is None:
            continue
        start = decision + exec_left
        exec_left = 0.0
        if not timeline.commit(chosen, server, start):
            timeline.drop(chosen, "deadline")
    return timeline


@dataclass
class RunMetrics:
    scheduler: str
    num_tasks: int
    dropped_count: int
    drop_ratio: float
    total_e2e: float
    avg_e2e: float
    total_waiting: float
    avg_waiting: float
    objective: float
    scheduler_exec_time: float
    exec_time_mode: str
    per_task_outcomes: list[TaskOutcome] = field(default_factory=list)
    windows_log: list[WindowRecord] = field(default_factory=list)
    convergence: list[float] = field(default_factory=list)
    best_fitness: Optional[float] = None

    @property
    def assigned_count(self) -> int:
        return self.num_tasks - self.dropped_count

    def summary(self) -> dict[str, Any]:
        return {
            "scheduler": self.scheduler,
            "num_tasks": self.num_tasks,
            "dropped_count": self.dropped_count,
            "assigned_count": self.assigned_count,
            "drop_ratio": self.drop_ratio,
            "total_e2e": self.total_e2e,
            "avg_e2e": self.avg_e2e,
            "total_waiting": self.total_waiting,
            "avg_waiting": self.avg_waiting,
            "objective": self.objective,
            "exec_time_s": self.scheduler_exec_time,
            "exec_time_mode": self.exec_time_mode,
            "best_fitness": self.best_fitness,
            "windows": len(self.windows_log),
        }

    def to_json(self) -> str:
        d = self.summary()
        d["convergence"] = self.convergence
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    def outcomes_jsonl(self) -> str:
        return "".join(json.dumps(o.__dict__, sort_keys=True) + "\n" for o in self.per_task_outcomes)

    def windows_jsonl(self) -> str:
        include_exec = self.exec_time_mode == "measured"
        return "".join(
            json.dumps(w.to_dict(include_exec), sort_keys=True) + "\n" for w in self.windows_log
        )


def summarize(
    name: str,
    scenario: Scenario,
    timeline: Timeline,
    engine: EngineConfig,
    exec_time: float,
    windows: Optional[list[WindowRecord]] = None,
    convergence: Optional[list[float]] = None,
    best_fitness: Optional[float] = None,
) -> RunMetrics:
    outcomes = timeline.outcomes(scenario.tasks)
    assigned = [o for o in outcomes if not o.dropped]
    total_e2e = math.fsum(o.e2e_latency for o in assigned)
    total_wait = math.fsum(o.waiting_time for o in assigned)
    k = len(assigned)
    return RunMetrics(
        scheduler=name,
        num_tasks=len(outcomes),
        dropped_count=dropped_count(outcomes),
        drop_ratio=drop_ratio(outcomes),
        total_e2e=total_e2e,
        avg_e2e=total_e2e / k if k else 0.0,
        total_waiting=total_wait,
        avg_waiting=total_wait / k if k else 0.0,
        objective=objective_value(outcomes, engine.weights),
        scheduler_exec_time=exec_time,
        exec_time_mode=engine.exec_time_mode,
        per_task_outcomes=outcomes,
        windows_log=windows or [],
        convergence=convergence or [],
        best_fitness=best_fitness,
    )


def _policy_factory(kind: str) -> Callable[[Timeline, EngineConfig], Scheduler]:
    policy = POLICIES[kind]
    return lambda tl, engine: policy


def run(scenario: Scenario, engine: EngineConfig, pso_params=None) -> RunMetrics:
    """Run one scheduler over one scenario."""
    kind = engine.scheduler_kind
    if kind in PSO_KINDS:
        if pso_params is None:
            raise ConfigurationError(f"{kind} needs PSO parameters")
        from . import pso

        return pso.REGIMES[kind](scenario, pso_params, engine)
    if pso_params is not None:
        raise ConfigurationError(f"{kind} takes no PSO parameters")
    tl, windows, exec_total = run_dynamic(scenario, _policy_factory(kind), engine)
    return summarize(kind, scenario, tl, engine, exec_total, windows)
