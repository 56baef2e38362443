"""Tests for unit-assignment scheduling and the greedy search."""

import csv
import itertools
import math
from functools import partial

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from servecast.autosearch import (
    GreedyParams,
    UnitAssignment,
    assignment_space,
    budget_sweep,
    compute_slack,
    critical_path,
    exhaustive_optimize,
    greedy_optimize,
    latency_proportional_assignment,
    makespan_bounds,
    resource_timeline,
    search,
    simulate_schedule,
    write_schedule_csv,
)
from servecast.cost_model import ResourceClass, op_resource_table, steady_state_composition
from servecast.exceptions import InfeasibleError, ScheduleError
from servecast.pipeline import (
    DEFAULT_SPLIT,
    OpKind,
    OpNode,
    PipelineGraph,
    build_overlapped_pipeline,
    build_sequential_pipeline,
    enumerate_splits,
)
from servecast.profiles import DEFAULT_ALPHAS, InterferenceMatrix, ProfileCurve, ProfileSet, synth_profiles

FAST = GreedyParams(quantum=4, max_iters=5)


def profiles(n_units: int, **alphas: float) -> ProfileSet:
    """One curve per kind at one second per unit of work; kinds named in ``alphas`` get that alpha."""
    classes = {
        OpKind.KQV: ResourceClass.COMPUTE,
        OpKind.DECODE_ATTN: ResourceClass.MEMORY,
        OpKind.ALL_GATHER: ResourceClass.NETWORK,
    }
    return ProfileSet.from_curves(
        ProfileCurve(
            op_kind=kind,
            resource_class=resource,
            alpha=alphas.get(kind.name, math.inf),
            n_units=n_units,
            seconds_per_work=1.0,
        )
        for kind, resource in classes.items()
    )


def graph(nodes: dict[str, tuple[OpKind, float]], edges=(), **kwargs) -> PipelineGraph:
    return PipelineGraph(
        [OpNode(node_id, kind, 0, work) for node_id, (kind, work) in nodes.items()], edges, DEFAULT_SPLIT, **kwargs
    )


def brute_force(g: PipelineGraph, profile_set: ProfileSet, budget: int) -> float:
    ids = [node.id for node in g.nodes]
    return min(
        simulate_schedule(g, UnitAssignment(dict(zip(ids, combo, strict=True)), budget), profile_set).makespan
        for combo in itertools.product(range(1, budget + 1), repeat=len(ids))
    )


def default_profiles(n_units: int) -> ProfileSet:
    return profiles(
        n_units,
        KQV=DEFAULT_ALPHAS[ResourceClass.COMPUTE],
        DECODE_ATTN=DEFAULT_ALPHAS[ResourceClass.MEMORY],
        ALL_GATHER=DEFAULT_ALPHAS[ResourceClass.NETWORK],
    )


@st.composite
def small_graphs(draw) -> tuple[PipelineGraph, int]:
    """Random DAGs of two to four operations with a budget small enough to enumerate."""
    n = draw(st.integers(min_value=2, max_value=4))
    kinds = st.sampled_from([OpKind.KQV, OpKind.DECODE_ATTN, OpKind.ALL_GATHER])
    nodes = {f"n{i}": (draw(kinds), draw(st.integers(min_value=1, max_value=3))) for i in range(n)}
    edges = [(f"n{i}", f"n{j}") for i, j in itertools.combinations(range(n), 2) if draw(st.booleans())]
    return graph(nodes, edges), draw(st.integers(min_value=2, max_value=6))


@pytest.fixture
def diamond() -> PipelineGraph:
    return graph(
        {"S": (OpKind.KQV, 1), "A": (OpKind.KQV, 1), "B": (OpKind.KQV, 3), "T": (OpKind.KQV, 1)},
        [("S", "A"), ("S", "B"), ("A", "T"), ("B", "T")],
    )


@pytest.fixture
def reference_profiles(a100_x8, llama2_70b, reference_workload):
    comp = steady_state_composition(2048, reference_workload, llama2_70b)
    rows = op_resource_table(a100_x8, llama2_70b, comp, reference_workload)
    return ProfileSet.from_curves(synth_profiles(a100_x8, llama2_70b, rows)), comp


# ============================================================================
# Tests: list scheduling
# ============================================================================


class TestSimulateSchedule:
    def test_diamond(self, diamond):
        schedule = simulate_schedule(diamond, UnitAssignment(dict.fromkeys("SABT", 2), 8), profiles(8))
        assert schedule.spans["S"].end == pytest.approx(4)
        assert schedule.spans["A"].start == pytest.approx(4)
        assert schedule.spans["B"].end == pytest.approx(16)
        assert schedule.makespan == pytest.approx(20)

    def test_units_block_start(self):
        g = graph({"a": (OpKind.KQV, 1), "b": (OpKind.KQV, 1)})
        schedule = simulate_schedule(g, UnitAssignment({"a": 5, "b": 5}, 8), profiles(8))
        assert schedule.spans["b"].start == pytest.approx(schedule.spans["a"].end)

    def test_class_capacity_serializes_saturated_ops(self):
        g = graph({"a": (OpKind.KQV, 1), "b": (OpKind.KQV, 1)})
        schedule = simulate_schedule(g, UnitAssignment({"a": 4, "b": 4}, 8), profiles(8, KQV=0.5))
        # four of eight units already reach 75% of the compute rate
        assert schedule.spans["a"].load == pytest.approx(0.75)
        assert schedule.spans["b"].start == pytest.approx(4 / 3)
        assert schedule.makespan == pytest.approx(8 / 3)

    def test_classes_share_units_not_rate(self):
        g = graph({"c": (OpKind.KQV, 1), "m": (OpKind.DECODE_ATTN, 1)})
        schedule = simulate_schedule(g, UnitAssignment({"c": 4, "m": 4}, 8), profiles(8))
        assert schedule.spans["m"].start == 0
        assert schedule.makespan == pytest.approx(2)
        assert schedule.utilization[ResourceClass.COMPUTE] == pytest.approx(0.5)

    def test_unmanaged_interference(self):
        g = graph({"a_mem": (OpKind.DECODE_ATTN, 1), "b_gemm": (OpKind.KQV, 1)})
        assign = UnitAssignment({"a_mem": 4, "b_gemm": 4}, 8)
        schedule = simulate_schedule(g, assign, profiles(8), InterferenceMatrix.unmanaged())
        assert schedule.spans["b_gemm"].slowdown == 2.5
        assert schedule.spans["b_gemm"].duration == pytest.approx(5)
        assert schedule.spans["a_mem"].slowdown == 1.0

    def test_layer_multiplier(self):
        g = graph({"a": (OpKind.KQV, 1)}, layer_multiplier=80)
        schedule = simulate_schedule(g, UnitAssignment({"a": 8}, 8), profiles(8))
        assert schedule.iteration_time == pytest.approx(80)

    def test_missing_assignment(self, diamond):
        with pytest.raises(ScheduleError, match="no units"):
            simulate_schedule(diamond, UnitAssignment({"S": 1}, 8), profiles(8))

    def test_units_above_budget(self, diamond):
        with pytest.raises(ScheduleError, match="exceeds"):
            simulate_schedule(diamond, UnitAssignment(dict.fromkeys("SABT", 9), 8), profiles(8))


class TestCriticalPath:
    def test_follows_longest_branch(self, diamond):
        schedule = simulate_schedule(diamond, UnitAssignment(dict.fromkeys("SABT", 2), 8), profiles(8))
        assert critical_path(schedule, diamond) == ["S", "B", "T"]

    def test_slack(self, diamond):
        schedule = simulate_schedule(diamond, UnitAssignment(dict.fromkeys("SABT", 2), 8), profiles(8))
        slack = compute_slack(schedule, diamond)
        assert slack["A"] == pytest.approx(8)
        assert slack["B"] == pytest.approx(0)
        assert slack["T"] == pytest.approx(0)

    def test_resource_wait_links_path(self):
        g = graph({"a": (OpKind.KQV, 2), "b": (OpKind.KQV, 1)})
        schedule = simulate_schedule(g, UnitAssignment({"a": 8, "b": 8}, 8), profiles(8))
        assert critical_path(schedule, g) == ["a", "b"]

    def test_overlapped_layer_path_is_gapless(self, reference_profiles):
        curves, comp = reference_profiles
        g = build_overlapped_pipeline(2048, comp, DEFAULT_SPLIT)
        schedule = simulate_schedule(g, latency_proportional_assignment(g, curves, 108), curves)
        path = critical_path(schedule, g)
        spans = schedule.spans
        assert spans[path[0]].start == 0
        assert spans[path[-1]].end == pytest.approx(schedule.makespan)
        for first, second in itertools.pairwise(path):
            assert spans[second].start == pytest.approx(spans[first].end)
        assert math.fsum(spans[n].duration for n in path) == pytest.approx(schedule.makespan)


# ============================================================================
# Tests: bounds and greedy search
# ============================================================================


class TestGreedy:
    def test_linear_scaling_reaches_area_bound(self):
        g = graph({"a": (OpKind.KQV, 2), "b": (OpKind.KQV, 1)})
        lower, _ = makespan_bounds(g, profiles(9), 9)
        _, schedule = greedy_optimize(g, profiles(9), 9)
        assert schedule.makespan == pytest.approx(3)
        assert schedule.makespan == pytest.approx(lower)
        assert schedule.makespan == pytest.approx(brute_force(g, profiles(9), 9))

    def test_concave_two_classes_match_brute_force(self):
        g = graph({"A": (OpKind.KQV, 1), "B": (OpKind.DECODE_ATTN, 1)})
        curves = profiles(4, KQV=0.5, DECODE_ATTN=0.15)
        assign, schedule = greedy_optimize(g, curves, 4)
        assert schedule.makespan == pytest.approx(4 / 3)
        assert schedule.makespan == pytest.approx(brute_force(g, curves, 4))
        assert (assign["A"], assign["B"]) == (2, 2)

    def test_chain_takes_whole_budget(self):
        g = graph(
            {"a": (OpKind.KQV, 2), "b": (OpKind.DECODE_ATTN, 1), "c": (OpKind.KQV, 1)},
            [("a", "b"), ("b", "c")],
        )
        curves = profiles(8, KQV=0.5, DECODE_ATTN=0.15)
        assign, schedule = greedy_optimize(g, curves, 8)
        assert set(assign.units.values()) == {8}
        assert schedule.makespan == pytest.approx(4.0)

    def test_within_bounds(self, diamond):
        curves = profiles(8, KQV=0.5)
        lower, upper = makespan_bounds(diamond, curves, 8)
        _, schedule = greedy_optimize(diamond, curves, 8)
        assert lower <= schedule.makespan * (1 + 1e-9)
        assert schedule.makespan <= upper * (1 + 1e-9)

    def test_latency_proportional_seed(self):
        g = graph({"a": (OpKind.KQV, 3), "b": (OpKind.KQV, 1)})
        assign = latency_proportional_assignment(g, profiles(8), 8)
        assert (assign["a"], assign["b"]) == (6, 2)

    def test_min_units_above_budget(self):
        g = PipelineGraph([OpNode("a", OpKind.KQV, 0, 1, min_units=3)], [], DEFAULT_SPLIT)
        with pytest.raises(InfeasibleError, match="minimum units"):
            greedy_optimize(g, profiles(8), 2)

    def test_budget_above_device(self, diamond):
        with pytest.raises(ScheduleError, match="execution units"):
            greedy_optimize(diamond, profiles(8), 9)

    def test_zero_budget(self, diamond):
        with pytest.raises(InfeasibleError):
            makespan_bounds(diamond, profiles(8), 0)

    def test_bad_params(self):
        with pytest.raises(ScheduleError):
            GreedyParams(quantum=0)

    def test_frees_units_so_independent_ops_overlap(self):
        # the collective and the second KQV only run side by side once both give units back
        g = graph({"A": (OpKind.KQV, 2), "B": (OpKind.ALL_GATHER, 2), "C": (OpKind.KQV, 2)}, [("A", "B")])
        curves = default_profiles(4)
        assign, schedule = greedy_optimize(g, curves, 4, GreedyParams(exhaustive_limit=0))
        assert schedule.makespan == pytest.approx(brute_force(g, curves, 4))
        assert schedule.makespan < 6 * 0.75
        assert (assign["A"], assign["B"], assign["C"]) == (4, 1, 3)

    @settings(max_examples=25, deadline=None)
    @given(small_graphs())
    def test_small_graphs_match_brute_force(self, case):
        g, budget = case
        curves = default_profiles(6)
        _, schedule = greedy_optimize(g, curves, budget)
        assert schedule.makespan <= brute_force(g, curves, budget) * 1.05

    def test_exhaustive_matches_brute_force(self, diamond):
        curves = profiles(4, KQV=0.5)
        _, schedule = exhaustive_optimize(diamond, curves, 4)
        assert schedule.makespan == pytest.approx(brute_force(diamond, curves, 4))

    def test_assignment_space(self, diamond):
        assert assignment_space(diamond, 8) == 8**4
        # 1, 4, 7 and the whole budget
        assert assignment_space(diamond, 8, quantum=3) == 4**4

    def test_negative_exhaustive_limit(self):
        with pytest.raises(ScheduleError, match="exhaustive_limit"):
            GreedyParams(exhaustive_limit=-1)

    def test_larger_budget_never_worse(self, diamond):
        results = budget_sweep(diamond, default_profiles(8), range(1, 9))
        makespans = [schedule.makespan for _, _, schedule in results]
        for smaller, larger in itertools.pairwise(makespans):
            assert larger <= smaller * (1 + 1e-9)

    def test_budget_sweep(self, diamond):
        results = budget_sweep(diamond, profiles(8, KQV=0.5), [8, 2, 4])
        assert [budget for budget, _, _ in results] == [2, 4, 8]
        for budget, assign, schedule in results:
            assert assign.budget == budget
            assert makespan_bounds(diamond, profiles(8, KQV=0.5), budget)[0] <= schedule.makespan * (1 + 1e-9)


# ============================================================================
# Tests: split search on a full layer
# ============================================================================


class TestSearch:
    def test_overlapped_layer(self, reference_profiles):
        curves, comp = reference_profiles
        builder = partial(build_overlapped_pipeline, 2048, comp)
        splits = enumerate_splits("1/4", vary=["o"])
        result = search(builder, splits, curves, 108, FAST)
        assert len(result.candidates) == 3
        assert result.best_schedule.makespan == min(c.makespan for c in result.candidates)
        assert result.lower_bound <= result.best_schedule.makespan * (1 + 1e-9)
        assert result.best_schedule.makespan <= result.upper_bound * (1 + 1e-9)
        assert result.to_dict()["improvement_over_sequential"] >= -1e-9

    def test_never_slower_than_sequential(self, reference_profiles):
        curves, comp = reference_profiles
        sequential = build_sequential_pipeline(2048, comp)
        _, sequential_makespan = makespan_bounds(sequential, curves, 108)
        result = search(partial(build_overlapped_pipeline, 2048, comp), [DEFAULT_SPLIT], curves, 108, FAST)
        assert result.best_schedule.makespan <= sequential_makespan * (1 + 1e-9)

    def test_overlap_beats_sequential_layer(self, reference_profiles):
        curves, comp = reference_profiles
        sequential = build_sequential_pipeline(2048, comp)
        _, sequential_makespan = makespan_bounds(sequential, curves, 108)
        result = search(partial(build_overlapped_pipeline, 2048, comp), [DEFAULT_SPLIT], curves, 108)
        assert 1 - result.best_schedule.makespan / sequential_makespan > 0.05

    def test_picks_best_candidate_deterministically(self, reference_profiles):
        curves, comp = reference_profiles
        builder = partial(build_overlapped_pipeline, 2048, comp)
        splits = enumerate_splits("1/2", vary=["o"])
        first = search(builder, splits, curves, 108, FAST)
        assert first.to_dict() == search(builder, splits, curves, 108, FAST).to_dict()
        makespans = [greedy_optimize(builder(split), curves, 108, FAST)[1].makespan for split in splits]
        assert [c.makespan for c in first.candidates] == pytest.approx(makespans)
        assert first.best_schedule.makespan == pytest.approx(min(makespans))

    def test_infeasible_candidates_are_reported(self, reference_profiles):
        curves, comp = reference_profiles

        def builder(split):
            g = build_overlapped_pipeline(2048, comp, split)
            return PipelineGraph(
                [OpNode(n.id, n.kind, n.nano_index, n.work, min_units=200) for n in g.nodes], g.edges, split
            )

        with pytest.raises(InfeasibleError, match="none of the 1 splits"):
            search(builder, [DEFAULT_SPLIT], curves, 108, FAST)

    def test_no_splits(self, reference_profiles):
        curves, comp = reference_profiles
        with pytest.raises(ScheduleError):
            search(partial(build_overlapped_pipeline, 2048, comp), [], curves, 108)


# ============================================================================
# Tests: export
# ============================================================================


class TestExport:
    def test_schedule_csv(self, diamond, tmp_path):
        schedule = simulate_schedule(diamond, UnitAssignment(dict.fromkeys("SABT", 2), 8), profiles(8))
        write_schedule_csv(tmp_path / "schedule.csv", schedule, diamond)
        with (tmp_path / "schedule.csv").open(encoding="utf-8") as stream:
            rows = list(csv.DictReader(stream))
        assert [row["node_id"] for row in rows] == ["S", "A", "B", "T"]
        assert rows[0]["kind"] == "KQV"
        assert float(rows[-1]["end_s"]) == pytest.approx(20)

    def test_timeline_returns_to_idle(self, diamond):
        schedule = simulate_schedule(diamond, UnitAssignment(dict.fromkeys("SABT", 2), 8), profiles(8))
        timeline = resource_timeline(schedule)
        assert timeline[0] == (0.0, 2, 0, 0)
        assert timeline[1] == (4.0, 4, 0, 0)
        assert timeline[-1][1:] == (0, 0, 0)
