"""
Iteration latency backends

``sequential`` runs the operations of the per-operation table one after
another. ``overlapped`` replays a per-dense-batch unit assignment, searched
once on the steady-state composition, on every iteration's own operation
graph; ``nanobatch`` does the same on the split-but-serialized graph. The
replayed schedule is reported as simulated, so an iteration whose
composition is far from the searched one may cost more than running
sequentially. Every backend is floored by the time the dense operations need
at full compute.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Protocol

from ..autosearch import GreedyParams, UnitAssignment, greedy_optimize, simulate_schedule
from ..cost_model import (
    BatchComposition,
    OpResourceRow,
    ResourceClass,
    iter_time_compute,
    op_resource_table,
    sequential_iteration_time,
    steady_state_composition,
    total_times,
)
from ..exceptions import SimulationError
from ..pipeline import (
    DEFAULT_SPLIT,
    NanoSplit,
    PipelineGraph,
    build_nanobatch_only_pipeline,
    build_overlapped_pipeline,
    build_single_device_pipeline,
)
from ..profiles import InterferenceMatrix, ProfileSet, synth_profiles
from ..specs import HardwareSpec, ModelConfig, WorkloadStats

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class IterationCost:
    latency: float
    t_compute: float = 0.0
    t_mem: float = 0.0
    t_net: float = 0.0

    @property
    def utilization(self) -> tuple[float, float, float]:
        if self.latency <= 0:
            return 0.0, 0.0, 0.0
        return tuple(min(1.0, t / self.latency) for t in (self.t_compute, self.t_mem, self.t_net))


class LatencyBackend(Protocol):
    name: str

    def iteration_cost(self, comp: BatchComposition, prefill_context: float) -> IterationCost: ...


@dataclass(frozen=True, slots=True)
class ProfileOptions:
    """How synthetic profiles are derived from the per-operation table."""

    alphas: Mapping[ResourceClass | str, float] = field(default_factory=dict)
    launch_overhead: float = 0.0
    tile_tokens: int = 0
    interference: InterferenceMatrix = field(default_factory=InterferenceMatrix.managed)


class SequentialBackend:
    name = "sequential"

    def __init__(
        self,
        hw: HardwareSpec,
        model: ModelConfig,
        *,
        decode_hint: float = 1.0,
        profile_options: ProfileOptions | None = None,
    ) -> None:
        self.hw = hw
        self.model = model
        self.decode_hint = max(decode_hint, 1.0)
        self.profile_options = profile_options or ProfileOptions()

    def rows(self, comp: BatchComposition, prefill_context: float) -> list[OpResourceRow]:
        stats = WorkloadStats(p_avg=prefill_context, d_avg=self.decode_hint)
        return op_resource_table(self.hw, self.model, comp, stats, self.profile_options.launch_overhead)

    def floor(self, comp: BatchComposition) -> float:
        return iter_time_compute(comp.b_dense, self.model, self.hw)

    def iteration_cost(self, comp: BatchComposition, prefill_context: float) -> IterationCost:
        rows = self.rows(comp, prefill_context)
        latency = max(sequential_iteration_time(rows), self.floor(comp))
        return IterationCost(latency, *total_times(rows))


GraphBuilder = Callable[..., PipelineGraph]


class ScheduledBackend(SequentialBackend):
    """Latency of a pipeline graph under a unit assignment searched per dense batch size."""

    def __init__(
        self,
        hw: HardwareSpec,
        model: ModelConfig,
        builder: GraphBuilder,
        *,
        name: str,
        reference: WorkloadStats,
        decode_hint: float = 1.0,
        profile_options: ProfileOptions | None = None,
        params: GreedyParams | None = None,
    ) -> None:
        super().__init__(hw, model, decode_hint=decode_hint, profile_options=profile_options)
        self.name = name
        self.builder = builder
        self.reference = reference
        self.params = params or GreedyParams()
        self.split = DEFAULT_SPLIT
        self._assignments: dict[int, UnitAssignment] = {}

    def graph_and_profiles(
        self, comp: BatchComposition, rows: list[OpResourceRow]
    ) -> tuple[PipelineGraph, ProfileSet]:
        options = self.profile_options
        graph = self.builder(comp.b_dense, comp, self.split, layer_multiplier=self.model.n_layers)
        curves = synth_profiles(
            self.hw,
            self.model,
            rows,
            options.alphas,
            launch_overhead=options.launch_overhead,
            tile_tokens=options.tile_tokens,
        )
        return graph, ProfileSet.from_curves(curves)

    def preset(self, b_dense: int, split: NanoSplit, assignment: UnitAssignment) -> None:
        """Replay a split and unit assignment searched elsewhere; drops assignments of other sizes."""
        self.split = split
        self._assignments = {b_dense: assignment}

    def assignment(self, b_dense: int) -> UnitAssignment:
        """Unit assignment searched on the steady-state composition of ``b_dense``."""
        if b_dense not in self._assignments:
            comp = steady_state_composition(b_dense, self.reference, self.model)
            rows = self.rows(comp, self.reference.p_avg)
            graph, profiles = self.graph_and_profiles(comp, rows)
            assign, schedule = greedy_optimize(
                graph, profiles, self.hw.n_units, self.params, self.profile_options.interference
            )
            _LOGGER.debug(
                "%s backend: dense batch %d searched, %.6g s per iteration",
                self.name,
                b_dense,
                schedule.iteration_time,
            )
            self._assignments[b_dense] = assign
        return self._assignments[b_dense]

    def iteration_cost(self, comp: BatchComposition, prefill_context: float) -> IterationCost:
        rows = self.rows(comp, prefill_context)
        graph, profiles = self.graph_and_profiles(comp, rows)
        schedule = simulate_schedule(
            graph, self.assignment(int(comp.b_dense)), profiles, self.profile_options.interference
        )
        return IterationCost(max(schedule.iteration_time, self.floor(comp)), *total_times(rows))


def make_backend(
    name: str,
    hw: HardwareSpec,
    model: ModelConfig,
    *,
    reference: WorkloadStats,
    profile_options: ProfileOptions | None = None,
    params: GreedyParams | None = None,
) -> LatencyBackend:
    """Backend by name; the overlapped graph drops its collectives on a single device."""
    hint = reference.d_avg
    if name == "sequential":
        return SequentialBackend(hw, model, decode_hint=hint, profile_options=profile_options)
    if name == "overlapped":
        builder = build_overlapped_pipeline if hw.n_devices > 1 else build_single_device_pipeline
    elif name == "nanobatch":
        builder = build_nanobatch_only_pipeline
    else:
        raise SimulationError(f"unknown latency backend {name!r}")
    return ScheduledBackend(
        hw,
        model,
        builder,
        name=name,
        reference=reference,
        decode_hint=hint,
        profile_options=profile_options,
        params=params,
    )
