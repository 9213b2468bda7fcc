from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from vecoffload.model import ChannelParams, Task
from vecoffload.workload import Scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_task(
    id: int,
    arrival: float,
    processing: float = 1.0,
    deadline: float | None = None,
    size: float = 2.16e6,
    uplink: float = 0.0,
    result: float | None = None,
) -> Task:
    """Task whose range window starts ``uplink`` seconds before arrival."""
    ready = arrival - uplink
    deadline = arrival + 100.0 if deadline is None else deadline
    return Task(
        id=id,
        size_bits=size,
        result_size_bits=size if result is None else result,
        arrival_time=arrival,
        processing_time=processing,
        deadline=deadline,
        range_window=deadline - ready,
        offload_ready_time=ready,
        uplink_time=uplink,
    )


def scenario_of(tasks: list[Task], servers: int = 2, channel: ChannelParams = ChannelParams()) -> Scenario:
    return Scenario(tuple(tasks), channel, servers)


@st.composite
def windows(draw, min_size: int = 1, max_size: int = 8):
    """(tasks, t_e): a decision window of arrived tasks with mixed slack."""
    n = draw(st.integers(min_size, max_size))
    t_e = draw(st.floats(0.0, 50.0))
    tasks = []
    for i in range(n):
        arrival = draw(st.floats(0.0, t_e))
        p = draw(st.sampled_from([0.8, 1.4, 2.2, 3.2]))
        slack = draw(st.floats(-2.0, 20.0))
        tasks.append(make_task(i, arrival, p, deadline=max(arrival, arrival + p + slack), uplink=0.05))
    return tasks, t_e


@pytest.fixture
def channel() -> ChannelParams:
    return ChannelParams()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
