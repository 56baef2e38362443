"""
Execution-unit scheduling and the greedy parameter search

A schedule is produced by event-driven list scheduling of a PipelineGraph
onto a budget of execution units. An operation starts when its predecessors
are done, its units are free and its resource class has capacity left: a
running operation occupies base_latency / duration of its class, so several
operations of one class never exceed the class's full-device rate.

greedy_optimize walks the critical path of the current schedule and gives the
operations on it more units, either from the idle pool or from the
non-critical operation with the most slack. When no such move helps it tries
growing or shrinking any single operation, then moving two operations at
once, so over-provisioned operations give units back and contended ones can
run side by side. Only strict improvements of (makespan, sum of end times)
are kept, and the best of several starting assignments wins. Graphs small
enough are enumerated exactly instead.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections import Counter
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any

from .const import (
    DEFAULT_EXHAUSTIVE_LIMIT,
    DEFAULT_MAX_ITERS,
    DEFAULT_QUANTUM,
    SCHEDULE_CSV_HEADER,
    TIMELINE_CSV_HEADER,
)
from .cost_model import ResourceClass
from .exceptions import InfeasibleError, ScheduleError
from .helpers import SyncTimer, write_csv
from .pipeline import NanoSplit, PipelineGraph
from .profiles import InterferenceMatrix, ProfileCurve, ProfileSet, eval_latency

_LOGGER = logging.getLogger(__name__)

_LOAD_SLACK = 1e-9
_TIME_TOL = 1e-12

ProfilesLike = ProfileSet | Iterable[ProfileCurve]


def _profile_set(profiles: ProfilesLike) -> ProfileSet:
    return profiles if isinstance(profiles, ProfileSet) else ProfileSet.from_curves(profiles)


@dataclass(frozen=True, slots=True)
class UnitAssignment:
    """Execution units requested by every operation of a graph."""

    units: Mapping[str, int]
    budget: int

    def __getitem__(self, node_id: str) -> int:
        return self.units[node_id]

    def with_units(self, changes: Mapping[str, int]) -> UnitAssignment:
        return UnitAssignment({**self.units, **changes}, self.budget)

    def validate(self, graph: PipelineGraph) -> None:
        if self.budget < 1:
            raise ScheduleError(f"unit budget must be >= 1, got {self.budget}")
        missing = [node.id for node in graph.nodes if node.id not in self.units]
        if missing:
            raise ScheduleError(f"no units assigned to {', '.join(missing)}")
        for node in graph.nodes:
            units = self.units[node.id]
            if units < node.min_units:
                raise ScheduleError(f"{node.id}: {units} units is below its minimum of {node.min_units}")
            if units > self.budget:
                raise ScheduleError(f"{node.id}: {units} units exceeds the budget of {self.budget}")

    @property
    def key(self) -> tuple[tuple[str, int], ...]:
        return tuple(sorted(self.units.items()))


@dataclass(frozen=True, slots=True)
class Span:
    node_id: str
    start: float
    end: float
    units: int
    resource_class: ResourceClass
    load: float
    slowdown: float = 1.0

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True, slots=True)
class Schedule:
    spans: Mapping[str, Span]
    makespan: float
    utilization: Mapping[ResourceClass, float]
    budget: int
    layer_multiplier: int = 1

    @property
    def iteration_time(self) -> float:
        """Makespan scaled to every layer the graph stands for."""
        return self.makespan * self.layer_multiplier

    @property
    def total_end(self) -> float:
        return math.fsum(span.end for span in self.spans.values())


@dataclass(frozen=True, slots=True)
class GreedyParams:
    quantum: int = DEFAULT_QUANTUM
    max_iters: int = DEFAULT_MAX_ITERS
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT

    def __post_init__(self) -> None:
        if self.quantum < 1:
            raise ScheduleError(f"quantum must be >= 1, got {self.quantum}")
        if self.max_iters < 0:
            raise ScheduleError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.exhaustive_limit < 0:
            raise ScheduleError(f"exhaustive_limit must be >= 0, got {self.exhaustive_limit}")


# ============================================================================
# Scheduling
# ============================================================================


def simulate_schedule(
    graph: PipelineGraph,
    assign: UnitAssignment,
    profiles: ProfilesLike,
    interference: InterferenceMatrix | None = None,
) -> Schedule:
    """
    List-schedule ``graph``. At every event the ready operations are tried in
    (topological rank, id) order and each one that fits starts; interference
    is sampled once, at start, from the classes already running.
    """
    profiles = _profile_set(profiles)
    interference = interference or InterferenceMatrix.managed()
    assign.validate(graph)

    order = {node_id: (graph.rank(node_id), node_id) for node_id in graph.topological_order()}
    waiting_on = {node.id: len(graph.predecessors(node.id)) for node in graph.nodes}
    ready = sorted((n for n, count in waiting_on.items() if count == 0), key=order.__getitem__)
    running: list[tuple[float, str]] = []
    free_units = assign.budget
    class_load: dict[ResourceClass, float] = dict.fromkeys(ResourceClass, 0.0)
    running_classes: Counter[ResourceClass] = Counter()
    spans: dict[str, Span] = {}
    now = 0.0

    while ready or running:
        blocked = []
        for node_id in ready:
            node = graph.node(node_id)
            curve = profiles[node.kind]
            units = assign[node_id]
            if units > free_units:
                blocked.append(node_id)
                continue
            cls = curve.resource_class
            slowdown = interference.factor(cls, (c for c, n in running_classes.items() if n))
            duration = eval_latency(curve, node.work, units) * slowdown
            load = min(1.0, curve.base_time(node.work) / duration) if duration > 0 else 0.0
            if class_load[cls] + load > 1 + _LOAD_SLACK:
                blocked.append(node_id)
                continue
            free_units -= units
            class_load[cls] += load
            running_classes[cls] += 1
            spans[node_id] = Span(node_id, now, now + duration, units, cls, load, slowdown)
            heapq.heappush(running, (now + duration, node_id))

        if not running:
            raise ScheduleError(f"nothing can start at t={now}: {', '.join(blocked)}")

        now, finished = heapq.heappop(running)
        done = [finished]
        while running and running[0][0] == now:
            done.append(heapq.heappop(running)[1])
        for node_id in done:
            span = spans[node_id]
            free_units += span.units
            running_classes[span.resource_class] -= 1
            class_load[span.resource_class] = (
                max(0.0, class_load[span.resource_class] - span.load) if running_classes[span.resource_class] else 0.0
            )
            for successor in graph.successors(node_id):
                waiting_on[successor] -= 1
                if waiting_on[successor] == 0:
                    blocked.append(successor)
        ready = sorted(blocked, key=order.__getitem__)

    makespan = max((span.end for span in spans.values()), default=0.0)
    busy: dict[ResourceClass, float] = dict.fromkeys(ResourceClass, 0.0)
    for span in spans.values():
        busy[span.resource_class] += span.load * span.duration
    utilization = {cls: (busy[cls] / makespan if makespan > 0 else 0.0) for cls in ResourceClass}
    return Schedule(spans, makespan, utilization, assign.budget, graph.layer_multiplier)


def critical_path(schedule: Schedule, graph: PipelineGraph) -> list[str]:
    """
    The longest chain of operations, each starting exactly when the previous
    one ended, that finishes at the makespan. A link is either a dependency
    or, when an operation started later than its dependencies allowed, an
    operation whose end released the resources it waited for.
    """
    spans = schedule.spans
    if not spans:
        return []
    tol = _TIME_TOL * max(1.0, schedule.makespan)
    by_end: dict[float, list[str]] = {}
    for span in spans.values():
        if span.duration > 0:
            by_end.setdefault(span.end, []).append(span.node_id)

    length: dict[str, float] = {}
    previous: dict[str, str | None] = {}
    for node_id in sorted(spans, key=lambda n: (spans[n].end, spans[n].start, graph.rank(n), n)):
        span = spans[node_id]
        predecessors = graph.predecessors(node_id)
        links = [p for p in predecessors if abs(spans[p].end - span.start) <= tol]
        ready_at = max((spans[p].end for p in predecessors), default=0.0)
        if not links and span.start > ready_at + tol:
            links = sorted(
                other
                for end, ids in by_end.items()
                if abs(end - span.start) <= tol
                for other in ids
                if other != node_id and other in length
            )
        best = None
        for link in links:
            if link in length and (best is None or length[link] > length[best]):
                best = link
        length[node_id] = span.duration + (length[best] if best else 0.0)
        previous[node_id] = best

    finishing = [n for n in spans if abs(spans[n].end - schedule.makespan) <= tol]
    last = min(finishing, key=lambda n: (-length[n], n))
    path = [last]
    while previous[path[-1]] is not None:
        path.append(previous[path[-1]])
    path.reverse()
    return path


def compute_slack(schedule: Schedule, graph: PipelineGraph) -> dict[str, float]:
    """Latest start that keeps the makespan, minus the actual start."""
    latest_start: dict[str, float] = {}
    for node_id in reversed(graph.topological_order()):
        span = schedule.spans[node_id]
        latest_finish = min((latest_start[s] for s in graph.successors(node_id)), default=schedule.makespan)
        latest_start[node_id] = latest_finish - span.duration
    return {node_id: max(0.0, latest_start[node_id] - schedule.spans[node_id].start) for node_id in latest_start}


# ============================================================================
# Bounds
# ============================================================================


def _latencies(curve: ProfileCurve, work: float, low: int, high: int) -> list[tuple[int, float]]:
    if curve.points:
        return [(u, eval_latency(curve, work, u)) for u in range(low, high + 1)]
    # analytic curves are monotone: fastest at high units, least area at low units
    return [(low, eval_latency(curve, work, low)), (high, eval_latency(curve, work, high))]


def makespan_bounds(graph: PipelineGraph, profiles: ProfilesLike, budget: int) -> tuple[float, float]:
    """
    (lower, upper) bounds on any schedule's makespan.

    lower is the largest of the dependency chain at the fastest unit count,
    the per-class work at full-device rate and the unit-time area over the
    budget; upper runs every operation alone on the whole budget.
    """
    profiles = _profile_set(profiles)
    _check_budget(graph, profiles, budget)
    fastest: dict[str, float] = {}
    class_work: dict[ResourceClass, float] = dict.fromkeys(ResourceClass, 0.0)
    area = 0.0
    upper = 0.0
    for node in graph.nodes:
        curve = profiles[node.kind]
        options = _latencies(curve, node.work, node.min_units, budget)
        fastest[node.id] = min(latency for _, latency in options)
        class_work[curve.resource_class] += min(curve.base_time(node.work), fastest[node.id])
        area += min(units * latency for units, latency in options)
        upper += eval_latency(curve, node.work, budget)

    chain: dict[str, float] = {}
    for node_id in graph.topological_order():
        chain[node_id] = fastest[node_id] + max((chain[p] for p in graph.predecessors(node_id)), default=0.0)
    lower = max(max(chain.values(), default=0.0), max(class_work.values()), area / budget)
    return lower, upper


def _check_budget(graph: PipelineGraph, profiles: ProfileSet, budget: int) -> None:
    if budget < 1:
        raise InfeasibleError(f"unit budget must be >= 1, got {budget}")
    limit = min(profiles[node.kind].n_units for node in graph.nodes)
    if budget > limit:
        raise ScheduleError(f"budget {budget} exceeds the {limit} execution units of the device")
    too_big = [node.id for node in graph.nodes if node.min_units > budget]
    if too_big:
        raise InfeasibleError(f"minimum units of {', '.join(too_big)} exceed the budget of {budget}")


# ============================================================================
# Greedy search
# ============================================================================


def latency_proportional_assignment(graph: PipelineGraph, profiles: ProfilesLike, budget: int) -> UnitAssignment:
    """Units in proportion to each operation's share of the full-budget latency, at least min_units."""
    profiles = _profile_set(profiles)
    latency = {node.id: eval_latency(profiles[node.kind], node.work, budget) for node in graph.nodes}
    total = math.fsum(latency.values())
    units = {}
    for node in graph.nodes:
        share = math.floor(budget * latency[node.id] / total + 1e-9) if total > 0 else 0
        units[node.id] = max(node.min_units, min(budget, share))
    return UnitAssignment(units, budget)


def _objective(schedule: Schedule) -> tuple[float, float]:
    return schedule.makespan, schedule.total_end


def _improves(candidate: tuple[float, float], incumbent: tuple[float, float]) -> bool:
    tol = 1e-9 * max(1.0, incumbent[0])
    if candidate[0] < incumbent[0] - tol:
        return True
    return abs(candidate[0] - incumbent[0]) <= tol and candidate[1] < incumbent[1] - 1e-9 * max(1.0, incumbent[1])


def _steps(quantum: int, budget: int) -> list[int]:
    steps = []
    step = quantum
    while step <= budget:
        steps.append(step)
        step *= 2
    return steps


def _fits(graph: PipelineGraph, node_id: str, units: int, budget: int) -> bool:
    return graph.node(node_id).min_units <= units <= budget


def _critical_moves(
    graph: PipelineGraph, assign: UnitAssignment, schedule: Schedule, steps: Sequence[int]
) -> Iterator[dict[str, int]]:
    """Grow each critical operation from the pool, or at the expense of the op with the most slack."""
    path = critical_path(schedule, graph)
    on_path = set(path)
    slack = compute_slack(schedule, graph)
    donors_by_slack = sorted((n for n in assign.units if n not in on_path), key=lambda n: (-slack[n], n))
    for node_id in dict.fromkeys(path):
        for step in steps:
            grown = assign[node_id] + step
            if grown > assign.budget:
                break
            yield {node_id: grown}
            donor = next((d for d in donors_by_slack if _fits(graph, d, assign[d] - step, assign.budget)), None)
            if donor is not None:
                yield {node_id: grown, donor: assign[donor] - step}


def _single_moves(graph: PipelineGraph, assign: UnitAssignment, steps: Sequence[int]) -> Iterator[dict[str, int]]:
    for node_id, units in assign.units.items():
        for step in steps:
            for changed in (units - step, units + step):
                if _fits(graph, node_id, changed, assign.budget):
                    yield {node_id: changed}


def _pair_moves(graph: PipelineGraph, assign: UnitAssignment, steps: Sequence[int]) -> Iterator[dict[str, int]]:
    """Move two operations at once: exchanges as well as joint shrinks that let both run side by side."""
    for first, second in itertools.combinations(assign.units, 2):
        for step in steps:
            for delta_first, delta_second in ((step, -step), (-step, step), (-step, -step), (step, step)):
                units_first = assign[first] + delta_first
                units_second = assign[second] + delta_second
                if _fits(graph, first, units_first, assign.budget) and _fits(
                    graph, second, units_second, assign.budget
                ):
                    yield {first: units_first, second: units_second}


def _best_move(
    graph: PipelineGraph,
    profiles: ProfileSet,
    interference: InterferenceMatrix | None,
    assign: UnitAssignment,
    moves: Iterable[dict[str, int]],
) -> tuple[tuple[float, float], UnitAssignment, Schedule] | None:
    best: tuple[tuple[float, float], UnitAssignment, Schedule] | None = None
    tried: set[tuple[tuple[str, int], ...]] = set()
    for change in moves:
        candidate = assign.with_units(change)
        if candidate.key in tried:
            continue
        tried.add(candidate.key)
        trial = simulate_schedule(graph, candidate, profiles, interference)
        trial_objective = _objective(trial)
        if best is None or _improves(trial_objective, best[0]):
            best = (trial_objective, candidate, trial)
    return best


def _climb(
    graph: PipelineGraph,
    profiles: ProfileSet,
    interference: InterferenceMatrix | None,
    params: GreedyParams,
    assign: UnitAssignment,
) -> tuple[UnitAssignment, Schedule, int]:
    schedule = simulate_schedule(graph, assign, profiles, interference)
    objective = _objective(schedule)
    steps = _steps(params.quantum, assign.budget)
    iterations = 0
    for iterations in range(1, params.max_iters + 1):  # noqa: B007
        # cheaper neighbourhoods first, the pair moves only once both stall
        neighbourhoods = (
            partial(_critical_moves, graph, assign, schedule, steps),
            partial(_single_moves, graph, assign, steps),
            partial(_pair_moves, graph, assign, steps[:2]),
        )
        for moves in neighbourhoods:
            best = _best_move(graph, profiles, interference, assign, moves())
            if best is not None and _improves(best[0], objective):
                break
        else:
            break
        objective, assign, schedule = best
        _LOGGER.debug("greedy step %d: makespan %.6g", iterations, schedule.makespan)
    return assign, schedule, iterations


def _unit_choices(min_units: int, budget: int, quantum: int) -> list[int]:
    choices = list(range(min_units, budget + 1, quantum))
    if choices[-1] != budget:
        choices.append(budget)
    return choices


def exhaustive_optimize(
    graph: PipelineGraph,
    profiles: ProfilesLike,
    budget: int,
    quantum: int = DEFAULT_QUANTUM,
    interference: InterferenceMatrix | None = None,
) -> tuple[UnitAssignment, Schedule]:
    """Best assignment over every combination of min_units, min_units + quantum, ..., budget."""
    profiles = _profile_set(profiles)
    _check_budget(graph, profiles, budget)
    ids = [node.id for node in graph.nodes]
    choices = [_unit_choices(node.min_units, budget, quantum) for node in graph.nodes]
    best: tuple[UnitAssignment, Schedule] | None = None
    for combo in itertools.product(*choices):
        assign = UnitAssignment(dict(zip(ids, combo, strict=True)), budget)
        schedule = simulate_schedule(graph, assign, profiles, interference)
        if best is None or _improves(_objective(schedule), _objective(best[1])):
            best = (assign, schedule)
    return best


def assignment_space(graph: PipelineGraph, budget: int, quantum: int = DEFAULT_QUANTUM) -> int:
    """Number of assignments exhaustive_optimize would simulate."""
    return math.prod(len(_unit_choices(node.min_units, budget, quantum)) for node in graph.nodes)


def greedy_optimize(
    graph: PipelineGraph,
    profiles: ProfilesLike,
    budget: int,
    params: GreedyParams | None = None,
    interference: InterferenceMatrix | None = None,
    seeds: Sequence[UnitAssignment] = (),
) -> tuple[UnitAssignment, Schedule]:
    """
    Climb from the latency-proportional assignment, from the whole budget on
    every operation, from min_units everywhere, from an even share and from
    any extra ``seeds``; return the best result. The whole-budget start runs
    operations one at a time, so the result never exceeds the sequential
    makespan. Graphs with at most ``params.exhaustive_limit`` assignments are
    enumerated instead.
    """
    params = params or GreedyParams()
    profiles = _profile_set(profiles)
    _check_budget(graph, profiles, budget)

    if assignment_space(graph, budget, params.quantum) <= params.exhaustive_limit:
        _LOGGER.debug("enumerating %d assignments of %r", assignment_space(graph, budget, params.quantum), graph)
        return exhaustive_optimize(graph, profiles, budget, params.quantum, interference)

    even = budget // len(graph.nodes)
    starts = [
        latency_proportional_assignment(graph, profiles, budget),
        UnitAssignment({node.id: budget for node in graph.nodes}, budget),
        UnitAssignment({node.id: node.min_units for node in graph.nodes}, budget),
        UnitAssignment({node.id: max(node.min_units, even) for node in graph.nodes}, budget),
    ]
    for seed in seeds:
        units = {node.id: max(node.min_units, min(budget, seed.units.get(node.id, budget))) for node in graph.nodes}
        starts.append(UnitAssignment(units, budget))
    starts = list({start.key: start for start in starts}.values())

    best: tuple[UnitAssignment, Schedule] | None = None
    with SyncTimer(f"greedy search on {graph!r}", _LOGGER):
        for start in starts:
            assign, schedule, iterations = _climb(graph, profiles, interference, params, start)
            _LOGGER.debug("seed climbed in %d iterations to makespan %.6g", iterations, schedule.makespan)
            if best is None or _improves(_objective(schedule), _objective(best[1])):
                best = (assign, schedule)
    return best


def budget_sweep(
    graph: PipelineGraph,
    profiles: ProfilesLike,
    budgets: Iterable[int],
    params: GreedyParams | None = None,
    interference: InterferenceMatrix | None = None,
) -> list[tuple[int, UnitAssignment, Schedule]]:
    """Greedy search over increasing budgets, each warm-started from the previous best."""
    results = []
    seeds: list[UnitAssignment] = []
    for budget in sorted(budgets):
        assign, schedule = greedy_optimize(graph, profiles, budget, params, interference, seeds)
        results.append((budget, assign, schedule))
        seeds = [assign]
    return results


@dataclass(frozen=True, slots=True)
class Candidate:
    split: NanoSplit
    makespan: float | None
    feasible: bool
    message: str = ""


@dataclass(frozen=True, slots=True)
class SearchResult:
    best_split: NanoSplit
    best_assignment: UnitAssignment
    best_schedule: Schedule
    best_graph: PipelineGraph
    candidates: tuple[Candidate, ...]
    lower_bound: float
    upper_bound: float
    extra: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "best_split": self.best_split,
            "makespan_s": self.best_schedule.makespan,
            "iteration_time_s": self.best_schedule.iteration_time,
            "layer_multiplier": self.best_schedule.layer_multiplier,
            "lower_bound_s": self.lower_bound,
            "upper_bound_s": self.upper_bound,
            "improvement_over_sequential": 1 - self.best_schedule.makespan / self.upper_bound
            if self.upper_bound > 0
            else 0.0,
            "budget": self.best_assignment.budget,
            "assignment": dict(sorted(self.best_assignment.units.items())),
            "utilization": {str(k): v for k, v in self.best_schedule.utilization.items()},
            "candidates": [
                {"split": c.split.describe(), "makespan_s": c.makespan, "feasible": c.feasible, "message": c.message}
                for c in self.candidates
            ],
            **self.extra,
        }


def _evaluate(
    graph_builder: Callable[[NanoSplit], PipelineGraph],
    profiles: ProfileSet,
    budget: int,
    params: GreedyParams,
    interference: InterferenceMatrix | None,
    split: NanoSplit,
) -> tuple[PipelineGraph, UnitAssignment, Schedule] | str:
    graph = graph_builder(split)
    try:
        assign, schedule = greedy_optimize(graph, profiles, budget, params, interference)
    except InfeasibleError as err:
        return str(err)
    return graph, assign, schedule


def search(
    graph_builder: Callable[[NanoSplit], PipelineGraph],
    splits: Sequence[NanoSplit],
    profiles: ProfilesLike,
    budget: int,
    params: GreedyParams | None = None,
    interference: InterferenceMatrix | None = None,
    workers: int = 1,
) -> SearchResult:
    """
    Greedy-optimize the graph of every split and keep the shortest makespan,
    ties going to the lexicographically earliest split. With ``workers`` > 1
    the candidates run in worker processes; ``graph_builder`` must then be
    picklable (a module-level function or a functools.partial of one).
    """
    if not splits:
        raise ScheduleError("no splits to search")
    params = params or GreedyParams()
    profiles = _profile_set(profiles)
    evaluate = partial(_evaluate, graph_builder, profiles, budget, params, interference)
    with SyncTimer(f"search over {len(splits)} splits", _LOGGER):
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(evaluate, splits))
        else:
            outcomes = [evaluate(split) for split in splits]

    candidates = []
    best = None
    for split, outcome in zip(splits, outcomes, strict=True):
        if isinstance(outcome, str):
            candidates.append(Candidate(split, None, feasible=False, message=outcome))
            continue
        graph, assign, schedule = outcome
        candidates.append(Candidate(split, schedule.makespan, feasible=True))
        if best is None or (schedule.makespan, split.key) < (best[3].makespan, best[0].key):
            best = (split, graph, assign, schedule)
    if best is None:
        raise InfeasibleError(f"none of the {len(splits)} splits fits a budget of {budget} units")

    split, graph, assign, schedule = best
    lower, upper = makespan_bounds(graph, profiles, budget)
    _LOGGER.info(
        "Best split %s: makespan %.6g s (bounds %.6g .. %.6g)",
        split.describe(),
        schedule.makespan,
        lower,
        upper,
    )
    return SearchResult(split, assign, schedule, graph, tuple(candidates), lower, upper)


# ============================================================================
# Export
# ============================================================================


def write_schedule_csv(path: str | Path, schedule: Schedule, graph: PipelineGraph) -> None:
    spans = sorted(schedule.spans.values(), key=lambda s: (s.start, s.node_id))
    write_csv(
        Path(path),
        SCHEDULE_CSV_HEADER,
        (
            (
                span.node_id,
                graph.node(span.node_id).kind,
                graph.node(span.node_id).nano_index,
                span.units,
                span.start,
                span.end,
            )
            for span in spans
        ),
    )


def resource_timeline(schedule: Schedule) -> list[tuple[float, int, int, int]]:
    """Units held by each resource class after every start or end event."""
    deltas: dict[float, Counter[ResourceClass]] = {}
    for span in schedule.spans.values():
        deltas.setdefault(span.start, Counter())[span.resource_class] += span.units
        deltas.setdefault(span.end, Counter())[span.resource_class] -= span.units
    held: Counter[ResourceClass] = Counter()
    timeline = []
    for time in sorted(deltas):
        held.update(deltas[time])
        timeline.append(
            (time, held[ResourceClass.COMPUTE], held[ResourceClass.MEMORY], held[ResourceClass.NETWORK])
        )
    return timeline


def write_timeline_csv(path: str | Path, schedule: Schedule) -> None:
    write_csv(Path(path), TIMELINE_CSV_HEADER, resource_timeline(schedule))
