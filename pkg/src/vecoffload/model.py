"""Domain types and the closed-form latency/objective arithmetic.

Every scheduler and the simulator go through these functions, so the
timing arithmetic lives in exactly one place. Units: seconds, bits, Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence


class InvalidInput(ValueError):
    """An argument violates an operation's precondition."""


class ScenarioInconsistency(ValueError):
    """Timestamps that cannot belong to a valid schedule."""


class ConsistencyError(RuntimeError):
    """Internal bookkeeping was violated (e.g. overlapping server intervals)."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class Task:
    id: int
    size_bits: float
    result_size_bits: float
    arrival_time: float  # at the RSU, after the uplink
    processing_time: float
    deadline: float  # absolute
    range_window: float  # coverage entry (offload_ready_time) to deadline
    offload_ready_time: float
    uplink_time: float = 0.0

    def __post_init__(self) -> None:
        if not self.size_bits > 0:
            raise InvalidInput(f"task {self.id}: size_bits must be > 0")
        if self.result_size_bits < 0:
            raise InvalidInput(f"task {self.id}: result_size_bits must be >= 0")
        if not self.processing_time > 0:
            raise InvalidInput(f"task {self.id}: processing_time must be > 0")
        if not self.range_window > 0:
            raise InvalidInput(f"task {self.id}: range_window must be > 0")
        if self.deadline < self.arrival_time:
            raise InvalidInput(f"task {self.id}: deadline precedes arrival")


@dataclass(frozen=True)
class TaskOutcome:
    task_id: int
    assigned_mec: Optional[int]
    start_processing_time: Optional[float] = None
    waiting_time: Optional[float] = None
    uplink_time: float = 0.0
    downlink_time: Optional[float] = None
    e2e_latency: Optional[float] = None
    dropped: bool = False
    drop_reason: Optional[str] = None

    def __post_init__(self) -> None:
        if self.dropped == (self.assigned_mec is not None):
            raise ConsistencyError(f"task {self.task_id}: must be exactly one of assigned or dropped")
        if not self.dropped and (self.e2e_latency is None or self.start_processing_time is None):
            raise ConsistencyError(f"task {self.task_id}: assigned outcome without timing")

    @property
    def assigned(self) -> bool:
        return not self.dropped


@dataclass
class MecState:
    """One single-CPU server: its next free instant and what it has run."""

    server_id: int
    available_at: float = 0.0
    assignment_log: list[tuple[int, float, float]] = field(default_factory=list)

    def assign(self, task_id: int, start: float, end: float) -> None:
        if end < start:
            raise ConsistencyError(f"server {self.server_id}: interval ends before it starts")
        if self.assignment_log and start < self.assignment_log[-1][2]:
            raise ConsistencyError(
                f"server {self.server_id}: task {task_id} starts at {start} "
                f"before previous task ends at {self.assignment_log[-1][2]}"
            )
        self.assignment_log.append((task_id, start, end))
        self.available_at = end

    def copy(self) -> "MecState":
        return MecState(self.server_id, self.available_at, list(self.assignment_log))


@dataclass(frozen=True)
class ChannelParams:
    max_bandwidth_hz: float = 20e6
    guard_band_fraction: float = 0.046
    tx_power_w: float = 0.2
    # p*g/n0 = 31, i.e. 5 bit/s/Hz with the default noise floor
    channel_gain: float = 1.55e-11
    noise_power_w: float = 1e-13  # -100 dBm

    def __post_init__(self) -> None:
        if not (0.0 <= self.guard_band_fraction < 1.0) or not self.max_bandwidth_hz > 0:
            raise InvalidInput("effective bandwidth must be positive")
        if not (self.tx_power_w > 0 and self.noise_power_w > 0 and self.channel_gain > 0):
            raise InvalidInput("tx power, noise power and channel gain must be positive")

    @property
    def effective_bandwidth_hz(self) -> float:
        return self.max_bandwidth_hz * (1.0 - self.guard_band_fraction)

    @property
    def snr(self) -> float:
        return self.tx_power_w * self.channel_gain / self.noise_power_w


@dataclass(frozen=True)
class ObjectiveWeights:
    lam: float = 0.4

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInput("lambda must lie in [0, 1]")


def waiting_time(start_processing: float, arrival: float) -> float:
    wait = start_processing - arrival
    if wait < 0:
        raise ScenarioInconsistency(
            f"processing starts at {start_processing} before arrival at {arrival}"
        )
    return wait


def computation_latency(processing: float, waiting: float) -> float:
    if processing < 0 or waiting < 0:
        raise InvalidInput("processing and waiting times must be non-negative")
    return processing + waiting


def bandwidth_share(concurrent_sizes: Sequence[float], effective_bandwidth: float, index: int) -> float:
    """Bandwidth of sender ``index`` when ``concurrent_sizes`` transmit together.

    A lone sender gets the whole band; otherwise the band is split in
    proportion to payload size.
    """
    if not concurrent_sizes:
        raise InvalidInput("no concurrent senders")
    if not 0 <= index < len(concurrent_sizes):
        raise InvalidInput(f"index {index} out of range")
    if any(s <= 0 for s in concurrent_sizes):
        raise InvalidInput("payload sizes must be positive")
    if len(concurrent_sizes) == 1:
        return effective_bandwidth
    return effective_bandwidth * concurrent_sizes[index] / math.fsum(concurrent_sizes)


def transmission_rate(bandwidth: float, channel: ChannelParams) -> float:
    if not bandwidth > 0:
        raise InvalidInput("bandwidth must be positive")
    snr = channel.snr
    if not snr > 0:
        raise InvalidInput("signal-to-noise term must be positive")
    return bandwidth * math.log2(1.0 + snr)


def transmission_time(size: float, rate: float) -> float:
    if not rate > 0:
        raise InvalidInput("rate must be positive")
    if size < 0:
        raise InvalidInput("size must be non-negative")
    return size / rate


def e2e_latency(computation: float, uplink: float, downlink: float) -> float:
    if computation < 0 or uplink < 0 or downlink < 0:
        raise InvalidInput("latency components must be non-negative")
    return computation + uplink + downlink


def is_assignable(e2e: float, range_window: float) -> bool:
    return e2e <= range_window


def dropped_count(outcomes: Sequence[TaskOutcome]) -> int:
    return sum(1 for o in outcomes if o.dropped)


def drop_ratio(outcomes: Sequence[TaskOutcome]) -> float:
    if not outcomes:
        raise InvalidInput("drop ratio of an empty run is undefined")
    return dropped_count(outcomes) / len(outcomes)


def objective_value(outcomes: Sequence[TaskOutcome], weights: ObjectiveWeights = ObjectiveWeights()) -> float:
    """lam * (sum of e2e over assigned tasks) + (1 - lam) * drop ratio."""
    latency_sum = math.fsum(o.e2e_latency for o in outcomes if not o.dropped)
    return weights.lam * latency_sum + (1.0 - weights.lam) * drop_ratio(outcomes)


def earliest_available(servers: Sequence[MecState]) -> tuple[int, float]:
    if not servers:
        raise InvalidInput("no servers")
    best = 0
    for j in range(1, len(servers)):
        if servers[j].available_at < servers[best].available_at:
            best = j
    return best, servers[best].available_at


def max_waiting_time(task: Task) -> float:
    """Longest wait that still meets the deadline; negative means already infeasible."""
    return task.deadline - task.processing_time - task.arrival_time


def meets_window_deadline(task: Task, decision_time: float, comm_time: float) -> bool:
    """Window eligibility: wait so far <= range_window - processing - communication."""
    wait = max(0.0, decision_time - task.arrival_time)
    return wait <= task.range_window - task.processing_time - comm_time
