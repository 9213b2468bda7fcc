import csv
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import objective_from_outcomes
from vecoffload.engine import EngineConfig, Timeline, bootstrap, run, run_dynamic
from vecoffload.model import InvalidInput, objective_value
from vecoffload.pso import (
    ConvergenceTrace,
    FitnessContext,
    PsoParams,
    WindowPso,
    decode,
    fitness,
    pso_run,
    schedule_order,
)
from vecoffload.workload import WorkloadConfig, generate_scenario

from conftest import make_task, scenario_of

SMALL = PsoParams(swarm_size=20, max_iterations=30)


def fixed(kind, eps=0.0):
    return EngineConfig(kind, "fixed", eps)


def all_arrived_ctx(sc, kind="objective"):
    """Every task has arrived before the servers are released."""
    base = Timeline(sc.channel, sc.num_servers, release_time=sc.tasks[-1].arrival_time)
    return FitnessContext(sc.tasks, base, kind=kind)


class TestDecode:
    def test_examples(self):
        tasks = [make_task(i, 0.0) for i in range(3)]
        assert [t.id for t in decode([0.1, 0.5, 0.9], tasks)] == [0, 1, 2]
        assert [t.id for t in decode([0.9, 0.1, 0.5], tasks)] == [1, 2, 0]

    def test_ties_lower_id_first(self):
        tasks = [make_task(i, 0.0) for i in range(3)]
        assert [t.id for t in decode([0.5, 0.5, 0.1], tasks)] == [2, 0, 1]

    def test_length_mismatch(self):
        with pytest.raises(InvalidInput):
            decode([0.1], [make_task(0, 0.0), make_task(1, 0.0)])

    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=15))
    def test_permutation_matching_independent_sort(self, keys):
        tasks = [make_task(i, 0.0) for i in range(len(keys))]
        order = [t.id for t in decode(keys, tasks)]
        assert sorted(order) == list(range(len(keys)))
        assert order == sorted(range(len(keys)), key=lambda i: (keys[i], i))


class TestFitness:
    def test_single_task_offline(self):
        sc = scenario_of([make_task(0, 2.0, 1.5)])
        ctx = FitnessContext(sc.tasks, Timeline(sc.channel, 1), kind="objective")
        tl = schedule_order(list(sc.tasks), ctx)
        assert fitness(list(sc.tasks), ctx) == pytest.approx(0.4 * tl.outcome(sc.tasks[0]).e2e_latency)

    def test_everything_dropped(self):
        tasks = [make_task(i, 0.0, 5.0, deadline=1.0) for i in range(3)]
        ctx = FitnessContext(tuple(tasks), Timeline(scenario_of(tasks).channel, 2), kind="objective")
        assert fitness(tasks, ctx) == pytest.approx(0.6)

    def test_online_exec_time_delays_first_start(self):
        tasks = [make_task(0, 0.0, 1.0), make_task(1, 0.0, 1.0)]
        ctx = FitnessContext(tuple(tasks), Timeline(scenario_of(tasks).channel, 2), exec_time=0.3)
        tl = schedule_order(tasks, ctx)
        assert tl.slots[0][2] == pytest.approx(0.3)

    @pytest.mark.parametrize("seed", range(4))
    def test_every_decoded_order_is_a_valid_schedule(self, seed):
        sc = generate_scenario(WorkloadConfig(num_vehicles=5, seed=seed))
        ctx = all_arrived_ctx(sc)
        release = sc.tasks[-1].arrival_time
        for perm in itertools.permutations(sc.tasks):
            outs = schedule_order(list(perm), ctx).outcomes(sc.tasks)
            done = [o for o in outs if not o.dropped]
            for o in done:
                t = sc.tasks[o.task_id]
                assert o.start_processing_time >= release
                assert o.e2e_latency <= t.range_window + 1e-9
            for a, b in itertools.combinations(done, 2):
                if a.assigned_mec == b.assigned_mec:
                    pa, pb = sc.tasks[a.task_id].processing_time, sc.tasks[b.task_id].processing_time
                    assert (a.start_processing_time + pa <= b.start_processing_time + 1e-12
                            or b.start_processing_time + pb <= a.start_processing_time + 1e-12)
            assert fitness(list(perm), ctx) == pytest.approx(objective_from_outcomes(outs))

    def test_objective_kind_equals_engine_objective(self):
        sc = generate_scenario(WorkloadConfig(num_vehicles=12, seed=1))
        ctx = all_arrived_ctx(sc)
        order = list(reversed(sc.tasks))
        tl = schedule_order(order, ctx)
        assert fitness(order, ctx) == objective_value(tl.outcomes(sc.tasks))

    def test_kinds_validated(self):
        with pytest.raises(InvalidInput):
            PsoParams(fitness_kind="cheapest")


class TestPsoRun:
    def test_single_task(self):
        sc = scenario_of([make_task(0, 0.0)])
        res = pso_run(FitnessContext(sc.tasks, Timeline(sc.channel, 2)), PsoParams())
        assert [t.id for t in res.order] == [0] and res.trace.best_fitness == [res.fitness]

    def test_within_five_percent_of_exhaustive_on_five_tasks(self):
        hits = 0
        for seed in range(10):
            sc = generate_scenario(WorkloadConfig(num_vehicles=5, seed=100 + seed))
            ctx = all_arrived_ctx(sc, "busy_time")
            best = min(fitness(list(p), ctx) for p in itertools.permutations(sc.tasks))
            res = pso_run(ctx, PsoParams(seed=seed, heuristic_seeds=0))
            assert res.fitness >= best - 1e-12
            hits += res.fitness <= best * 1.05
        assert hits >= 9

    @given(st.integers(0, 2**32), st.integers(3, 12), st.sampled_from(["busy_time", "drop_first", "objective"]))
    @settings(max_examples=15)
    def test_trace_non_increasing_and_consistent(self, seed, n, kind):
        sc = generate_scenario(WorkloadConfig(num_vehicles=n, seed=seed))
        params = PsoParams(swarm_size=8, max_iterations=12, seed=seed, fitness_kind=kind)
        res = pso_run(all_arrived_ctx(sc, kind), params)
        assert res.trace.is_non_increasing()
        assert len(res.trace.best_fitness) == params.max_iterations + 1
        assert res.trace.best_fitness[-1] == res.fitness
        assert fitness(res.order, all_arrived_ctx(sc, kind)) == res.fitness

    def test_seeded_determinism(self):
        sc = generate_scenario(WorkloadConfig(num_vehicles=15, seed=3))
        a = pso_run(all_arrived_ctx(sc), SMALL)
        b = pso_run(all_arrived_ctx(sc), SMALL)
        assert [t.id for t in a.order] == [t.id for t in b.order] and a.trace.best_fitness == b.trace.best_fitness

    def test_stall_stops_early_without_losing_the_best(self):
        sc = generate_scenario(WorkloadConfig(num_vehicles=30, seed=5))
        ctx = all_arrived_ctx(sc, "busy_time")
        full = pso_run(ctx, SMALL)
        short = pso_run(ctx, SMALL, stall=3)
        assert len(short.trace.best_fitness) <= len(full.trace.best_fitness)
        assert short.trace.best_fitness == full.trace.best_fitness[: len(short.trace.best_fitness)]
        stuck = short.trace.best_fitness[-4:]
        assert len(short.trace.best_fitness) == SMALL.max_iterations + 1 or len(set(stuck)) == 1
        assert short.fitness == short.trace.best_fitness[-1]

    def test_trace_csv(self, tmp_path):
        ConvergenceTrace([3.0, 2.5, 2.5]).to_csv(tmp_path / "c.csv")
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows == [["iteration", "best_fitness"], ["0", "3.0"], ["1", "2.5"], ["2", "2.5"]]

    @pytest.mark.parametrize(
        "kw", [dict(swarm_size=1), dict(inertia=0.0), dict(inertia=1.5), dict(cognitive_coeff=0.0), dict(heuristic_seeds=9), dict(window_stall_iterations=0)]
    )
    def test_params_validated(self, kw):
        with pytest.raises(InvalidInput):
            PsoParams(**kw)


class TestOffline:
    def test_two_tasks_start_on_arrival(self):
        sc = scenario_of([make_task(0, 1.0, 2.0), make_task(1, 1.2, 1.0)])
        m = run(sc, fixed("off_sta_pso"), SMALL)
        assert [o.waiting_time for o in m.per_task_outcomes] == [0.0, 0.0]

    def test_exec_time_reported_not_charged(self):
        sc = generate_scenario(WorkloadConfig(num_vehicles=20, seed=2))
        a = run(sc, fixed("off_sta_pso", 0.0), SMALL)
        b = run(sc, fixed("off_sta_pso", 5.0), SMALL)
        assert b.scheduler_exec_time == 5.0
        assert a.total_e2e == b.total_e2e and a.dropped_count == b.dropped_count

    def test_five_tasks_objective_not_beaten(self):
        literal = PsoParams(fitness_kind="objective")
        for seed in range(10):
            sc = generate_scenario(WorkloadConfig(num_vehicles=5, seed=seed))
            off = run(sc, fixed("off_sta_pso"), literal).objective
            for kind in ("fcfs", "sdf", "cda"):
                assert off <= run(sc, fixed(kind)).objective + 1e-9
            assert off <= run(sc, fixed("on_dyn_pso"), literal).objective + 1e-9
            assert run(sc, fixed("off_sta_pso"), literal).dropped_count <= run(sc, fixed("on_sta_pso"), literal).dropped_count


class TestOnlineStatic:
    def test_first_start_after_last_arrival_plus_exec(self):
        sc = generate_scenario(WorkloadConfig(num_vehicles=15, seed=4))
        m = run(sc, fixed("on_sta_pso", 0.4), SMALL)
        starts = [o.start_processing_time for o in m.per_task_outcomes if not o.dropped]
        assert min(starts) >= sc.tasks[-1].arrival_time + 0.4 - 1e-12

    def test_waits_at_least_offline(self):
        for seed in range(10):
            sc = generate_scenario(WorkloadConfig(num_vehicles=20, seed=seed))
            on = run(sc, fixed("on_sta_pso"), SMALL)
            off = run(sc, fixed("off_sta_pso"), SMALL)
            assert on.avg_waiting >= off.avg_waiting

    def test_single_task_degenerates_to_offline(self):
        sc = scenario_of([make_task(0, 3.0, 1.0)])
        on = run(sc, fixed("on_sta_pso"), SMALL)
        off = run(sc, fixed("off_sta_pso"), SMALL)
        assert on.per_task_outcomes == off.per_task_outcomes


class TestOnlineDynamic:
    def test_two_tasks_no_windows(self):
        sc = scenario_of([make_task(0, 0.0), make_task(1, 0.5)])
        assert run(sc, fixed("on_dyn_pso"), SMALL).windows_log == []

    @pytest.mark.parametrize("seed", range(3))
    def test_singleton_window_any_seed(self, seed):
        tasks = [make_task(0, 0.0, 2.0), make_task(1, 0.0, 2.0), make_task(2, 5.0, 1.0)]
        m = run(scenario_of(tasks), fixed("on_dyn_pso"), PsoParams(seed=seed))
        assert [w.decision.chosen_task_id for w in m.windows_log] == [2]

    def test_small_windows_pick_an_optimal_head(self):
        sc = generate_scenario(WorkloadConfig(num_vehicles=40, seed=8))
        engine = fixed("on_dyn_pso", 0.01)
        checked = []

        class Checked(WindowPso):
            def __call__(self, window, t_e_av):
                decision = super().__call__(window, t_e_av)
                if decision is not None and 1 < len(window) <= 6:
                    ctx = self.window_context(window, t_e_av)
                    scores = {p: fitness(list(p), ctx) for p in itertools.permutations(ctx.tasks)}
                    best = min(scores.values())
                    heads = {p[0].id for p, f in scores.items() if f == best}
                    checked.append(decision.decision_cost == best and decision.chosen_task_id in heads)
                return decision

        run_dynamic(sc, lambda tl, eng: Checked(tl, eng, PsoParams(seed=1)), engine)
        assert checked and all(checked)

    def test_window_traces_logged_and_monotone(self):
        sc = generate_scenario(WorkloadConfig(num_vehicles=25, seed=6))
        m = run(sc, fixed("on_dyn_pso"), SMALL)
        for w in m.windows_log:
            trace = ConvergenceTrace(w.extra["pso_trace"])
            assert trace.is_non_increasing()
            assert w.extra["pso_order"][0] == w.decision.chosen_task_id

    def test_whole_set_window_matches_offline_space(self):
        # all tasks arrive together: the first dynamic window and the offline search see the same tasks
        tasks = [make_task(i, 0.0, p) for i, p in enumerate([2.2, 0.8, 1.4, 3.2, 0.8])]
        sc = scenario_of(tasks)
        dyn = run(sc, fixed("on_dyn_pso"), SMALL)
        assert sorted(dyn.windows_log[0].eligible) == [2, 3, 4]
        base = Timeline(sc.channel, 2)
        bootstrap(base, sc.tasks)
        ctx = FitnessContext(sc.tasks[2:], base, sc.tasks[:2], kind="drop_first")
        assert {t.id for t in ctx.tasks} == set(dyn.windows_log[0].eligible)


def test_fixed_mode_regimes_deterministic():
    sc = generate_scenario(WorkloadConfig(num_vehicles=20, seed=12))
    for kind in ("off_sta_pso", "on_sta_pso", "on_dyn_pso"):
        assert run(sc, fixed(kind, 0.02), SMALL).to_json() == run(sc, fixed(kind, 0.02), SMALL).to_json()
