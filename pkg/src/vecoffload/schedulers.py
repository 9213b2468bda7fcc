"""Per-window selection policies: FCFS, SDF and the cost-driven selector (CDA).

Each policy looks at one decision window (arrived, still-feasible tasks)
and returns the single task to start on the server that frees up next.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .model import Task, max_waiting_time


@dataclass(frozen=True)
class DecisionWindow:
    window_index: int
    span_start: float  # start of the most recently assigned task
    span_end: float  # earliest server availability (decision instant)
    eligible: tuple[Task, ...]
    excluded_infeasible: tuple[int, ...] = ()
    target_server: int = 0

    def __len__(self) -> int:
        return len(self.eligible)


@dataclass(frozen=True)
class SchedulerDecision:
    chosen_task_id: int
    target_server: int
    decision_cost: float
    per_candidate_costs: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "chosen_task_id": self.chosen_task_id,
            "target_server": self.target_server,
            "decision_cost": self.decision_cost,
            # JSON object keys must be strings
            "per_candidate_costs": {str(k): v for k, v in sorted(self.per_candidate_costs.items())},
        }


# Returns None on an empty window (the engine then advances time).
Scheduler = Callable[[DecisionWindow, float], Optional[SchedulerDecision]]


def _pick(window: DecisionWindow, costs: dict[int, float]) -> SchedulerDecision:
    # ties: earliest arrival, then lowest id
    best = min(window.eligible, key=lambda t: (costs[t.id], t.arrival_time, t.id))
    return SchedulerDecision(best.id, window.target_server, costs[best.id], costs)


def schedule_fcfs(window: DecisionWindow, t_e_av: float = 0.0) -> Optional[SchedulerDecision]:
    if not window.eligible:
        return None
    return _pick(window, {t.id: t.arrival_time for t in window.eligible})


def schedule_sdf(window: DecisionWindow, t_e_av: float = 0.0) -> Optional[SchedulerDecision]:
    if not window.eligible:
        return None
    return _pick(window, {t.id: t.deadline for t in window.eligible})


def drop_condition(selected_processing: float, affected_waiting: float, affected_w_max: float) -> int:
    """1 if running the selected task first pushes the affected task past its wait budget."""
    return 0 if selected_processing + affected_waiting <= affected_w_max else 1


def cda_cost(selected: Task, window: DecisionWindow, t_e_av: float) -> float:
    """Local cost of starting ``selected`` now, summed over the other window tasks.

    An affected task contributes 1 if it would be dropped, otherwise the
    fraction of its wait budget consumed.
    """
    terms = []
    p_s = selected.processing_time
    for a in window.eligible:
        if a.id == selected.id:
            continue
        wait = max(0.0, t_e_av - a.arrival_time)
        w_max = max_waiting_time(a)
        if w_max <= 0 or drop_condition(p_s, wait, w_max):
            terms.append(1.0)
        else:
            terms.append((p_s + wait) / w_max)
    return math.fsum(terms)


def schedule_cda(window: DecisionWindow, t_e_av: float) -> Optional[SchedulerDecision]:
    if not window.eligible:
        return None
    costs = {t.id: cda_cost(t, window, t_e_av) for t in window.eligible}
    return _pick(window, costs)


POLICIES: dict[str, Scheduler] = {
    "fcfs": schedule_fcfs,
    "sdf": schedule_sdf,
    "cda": schedule_cda,
}
