"""
Analytical serving cost model

Iteration latency by resource, the batch-size relations between requests and
dense tokens, workload classification, the optimal-throughput bound and the
per-operation resource accounting of a batch.

All quantities are aggregated over layers and devices unless a name says
otherwise. Nothing here is rounded; admission counts are rounded by the
simulator only.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from decimal import Decimal
from ._compat import StrEnum

from .const import (
    ACTIVATION_COPIES_PER_LAYER,
    DENSE_OPERATIONS,
    OP_COMMUNICATION,
    OP_DECODE_ATTENTION,
    OP_GEMM_D,
    OP_GEMM_KQV,
    OP_GEMM_O,
    OP_GEMM_UG,
    OP_PREFILL_ATTENTION,
    REFERENCE_OP_TABLE,
    REL_TOL,
    RESIDUAL_TOLERANCE,
    TABLE_CSV_HEADER,
)
from .exceptions import InvariantError, ModelDoesNotFitError
from .helpers import relative_residual
from .specs import HardwareSpec, ModelConfig, WorkloadStats

_LOGGER = logging.getLogger(__name__)


class ResourceClass(StrEnum):
    COMPUTE = "compute"
    MEMORY = "memory"
    NETWORK = "network"


class Classification(StrEnum):
    COMPUTE_BOUND = "compute-bound"
    MEMORY_BOUND = "memory-bound"
    NETWORK_BOUND = "network-bound"


class NetworkMode(StrEnum):
    """
    closed-form divides the collective traffic by the bidirectional link rate;
    detailed counts the (n-1)/n ring share per device over the one-way rate,
    which is what the per-operation table uses. detailed / closed-form
    is (n-1)·net_bw / (n·net_bw_oneway), 1.75 on eight devices with a halved
    one-way rate.
    """

    CLOSED_FORM = "closed-form"
    DETAILED = "detailed"


@dataclass(frozen=True, slots=True)
class BatchComposition:
    """Token make-up of one iteration; padding only adds dense-operation work."""

    b_req: float
    b_dense: float
    e_kv_touched: float
    n_prefill_tokens: float
    n_decode_tokens: float
    n_padding_tokens: float = 0.0

    def __post_init__(self) -> None:
        for field in ("b_req", "b_dense", "e_kv_touched", "n_prefill_tokens", "n_decode_tokens", "n_padding_tokens"):
            if getattr(self, field) < 0:
                raise InvariantError(f"must be >= 0, got {getattr(self, field)}", field=field)
        tokens = self.n_prefill_tokens + self.n_decode_tokens + self.n_padding_tokens
        if abs(tokens - self.b_dense) > REL_TOL * max(1.0, self.b_dense):
            raise InvariantError(
                f"b_dense {self.b_dense} != prefill + decode + padding {tokens}",
                field="b_dense",
            )

    @property
    def is_empty(self) -> bool:
        return self.b_dense == 0


@dataclass(frozen=True, slots=True)
class CostBreakdown:
    t_mem: float
    t_compute: float
    t_net: float
    t_ratio: float
    classification: Classification
    b_req: float
    b_dense: float


@dataclass(frozen=True, slots=True)
class OpResourceRow:
    """Resource usage of one operation summed over all layers for one iteration."""

    op: str
    compute: float
    mem_moved: float
    net_moved: float
    t_compute: float
    t_mem: float
    t_net: float
    bound_by: ResourceClass
    work: float
    compute_alt: float | None = None
    launch_overhead: float = 0.0

    @property
    def t_binding(self) -> float:
        return max(self.t_compute, self.t_mem, self.t_net)

    @property
    def t_op(self) -> float:
        return self.t_binding + self.launch_overhead


@dataclass(frozen=True, slots=True)
class Residual:
    op: str
    column: str
    computed: float
    published: float
    residual: float

    @property
    def flagged(self) -> bool:
        return self.residual > RESIDUAL_TOLERANCE


def binding_resource(t_compute: float, t_mem: float, t_net: float) -> ResourceClass:
    # ties resolve in declaration order, compute first
    longest = max(t_compute, t_mem, t_net)
    if t_compute == longest:
        return ResourceClass.COMPUTE
    if t_mem == longest:
        return ResourceClass.MEMORY
    return ResourceClass.NETWORK


def classify(t_compute: float, t_mem: float, t_net: float) -> Classification:
    return {
        ResourceClass.COMPUTE: Classification.COMPUTE_BOUND,
        ResourceClass.MEMORY: Classification.MEMORY_BOUND,
        ResourceClass.NETWORK: Classification.NETWORK_BOUND,
    }[binding_resource(t_compute, t_mem, t_net)]


# ============================================================================
# Batch-size relations
# ============================================================================


def e_kv(hw: HardwareSpec, model: ModelConfig) -> float:
    """KV-cache element capacity left after the weights, over all devices."""
    capacity = hw.n_devices * hw.mem_size
    elements = capacity / model.dtype_bytes - model.p_model
    if elements <= 0:
        raise ModelDoesNotFitError(model.name, hw.name, model.weight_bytes, capacity)
    return elements


def max_requests(hw: HardwareSpec, model: ModelConfig, stats: WorkloadStats) -> float:
    """Requests that fit when each holds, on average, p + d/2 tokens of KV cache."""
    context = stats.p_avg + stats.d_avg / 2
    if context <= 0:
        raise InvariantError("p_avg + d_avg/2 must be positive", field="p_avg")
    return e_kv(hw, model) / context * model.r_gqa / (2 * model.d_model * model.n_layers)


def dense_batch(b_req: float, stats: WorkloadStats) -> float:
    return b_req * (stats.p_avg + stats.d_avg) / (stats.d_avg + 1)


def steady_state_composition(b_dense: float, stats: WorkloadStats, model: ModelConfig) -> BatchComposition:
    """
    Average iteration for a dense batch: every request contributes p/(d+1)
    prefill and d/(d+1) decode tokens, and decoding requests sit on average at
    half their output length.
    """
    if stats.p_avg + stats.d_avg <= 0:
        raise InvariantError("p_avg + d_avg must be positive", field="p_avg")
    b_req = b_dense * (stats.d_avg + 1) / (stats.p_avg + stats.d_avg)
    n_prefill = b_req * stats.p_avg / (stats.d_avg + 1)
    n_decode = b_dense - n_prefill
    e_touched = n_decode * (stats.p_avg + stats.d_avg / 2) * model.kv_elements_per_token
    return BatchComposition(
        b_req=b_req,
        b_dense=b_dense,
        e_kv_touched=e_touched,
        n_prefill_tokens=n_prefill,
        n_decode_tokens=n_decode,
    )


# ============================================================================
# Iteration times
# ============================================================================


def iter_time_memory(hw: HardwareSpec) -> float:
    return hw.mem_size / hw.mem_bw


def iter_time_compute(b_dense: float, model: ModelConfig, hw: HardwareSpec) -> float:
    return 2 * b_dense * model.p_active / (hw.n_devices * hw.compute)


def collective_bytes(b_dense: float, model: ModelConfig, hw: HardwareSpec) -> float:
    """Bytes each iteration's AllGather/AllReduce traffic puts on the links, summed over devices."""
    return (
        ACTIVATION_COPIES_PER_LAYER
        * b_dense
        * model.d_model
        * model.dtype_bytes
        * model.n_layers
        * (hw.n_devices - 1)
    )


def iter_time_network(
    b_dense: float,
    model: ModelConfig,
    hw: HardwareSpec,
    mode: NetworkMode = NetworkMode.DETAILED,
) -> float:
    if mode == NetworkMode.CLOSED_FORM:
        return ACTIVATION_COPIES_PER_LAYER * b_dense * model.d_model * model.dtype_bytes * model.n_layers / hw.net_bw
    return collective_bytes(b_dense, model, hw) / (hw.n_devices * hw.net_bw_oneway)


def t_ratio(
    hw: HardwareSpec,
    model: ModelConfig,
    stats: WorkloadStats,
    network_mode: NetworkMode = NetworkMode.DETAILED,
) -> CostBreakdown:
    b_req = max_requests(hw, model, stats)
    b_dense = dense_batch(b_req, stats)
    t_mem = iter_time_memory(hw)
    t_compute = iter_time_compute(b_dense, model, hw)
    t_net = iter_time_network(b_dense, model, hw, network_mode)
    breakdown = CostBreakdown(
        t_mem=t_mem,
        t_compute=t_compute,
        t_net=t_net,
        t_ratio=t_mem / t_compute,
        classification=classify(t_compute, t_mem, t_net),
        b_req=b_req,
        b_dense=b_dense,
    )
    _LOGGER.debug(
        "%s on %dx%s: T_R=%.3f (%s)",
        model.name,
        hw.n_devices,
        hw.name,
        breakdown.t_ratio,
        breakdown.classification,
    )
    return breakdown


def classify_datasets(
    hw: HardwareSpec,
    model: ModelConfig,
    workloads: Iterable[WorkloadStats],
) -> dict[str, CostBreakdown]:
    return {stats.name: t_ratio(hw, model, stats) for stats in workloads}


def optimal_throughput(hw: HardwareSpec, model: ModelConfig) -> float:
    """Upper bound on total tokens/s when dense operations saturate compute."""
    return hw.n_devices * hw.compute / (2 * model.p_active)


def convert_throughput(total: float, stats: WorkloadStats) -> tuple[float, float]:
    """Split a total token rate into (decoding tokens/s, requests/s)."""
    tokens = stats.p_avg + stats.d_avg
    if tokens <= 0:
        raise InvariantError("p_avg + d_avg must be positive", field="p_avg")
    return total * stats.d_avg / tokens, total / tokens


def offload_bandwidth(throughput: float, model: ModelConfig) -> float:
    """Host bandwidth needed to offload the KV cache of every token produced."""
    return throughput * model.kv_bytes_per_token


# ============================================================================
# Per-operation accounting
# ============================================================================


def _row(
    op: str,
    hw: HardwareSpec,
    *,
    compute: float,
    mem: float,
    net: float,
    work: float,
    launch_overhead: float,
    compute_alt: float | None = None,
) -> OpResourceRow:
    t_compute = compute / (hw.n_devices * hw.compute)
    t_mem = mem / (hw.n_devices * hw.mem_bw)
    t_net = net / (hw.n_devices * hw.net_bw_oneway)
    return OpResourceRow(
        op=op,
        compute=compute,
        mem_moved=mem,
        net_moved=net,
        t_compute=t_compute,
        t_mem=t_mem,
        t_net=t_net,
        bound_by=binding_resource(t_compute, t_mem, t_net),
        work=work,
        compute_alt=compute_alt,
        launch_overhead=launch_overhead,
    )


def dense_shapes(model: ModelConfig) -> dict[str, tuple[int, int, int, int]]:
    """(N, K, weight copies, activated copies) of each dense projection."""
    d = model.d_model
    experts, top_k = model.moe_experts, model.moe_top_k
    return {
        OP_GEMM_KQV: (model.kqv_out_dim, d, 1, 1),
        OP_GEMM_O: (d, d, 1, 1),
        OP_GEMM_UG: (2 * model.d_intermediate, d, experts, top_k),
        OP_GEMM_D: (d, model.d_intermediate, experts, top_k),
    }


def op_resource_table(
    hw: HardwareSpec,
    model: ModelConfig,
    comp: BatchComposition,
    stats: WorkloadStats,
    launch_overhead: float = 0.0,
) -> list[OpResourceRow]:
    """
    Compute, memory and network usage of every operation of one iteration.

    ``launch_overhead`` is seconds per operation instance per layer. Prefill
    attention uses the workload's mean prompt as context, which equals the
    closed form 4·(b_req/(d+1))·p²·D·L at steady state.
    """
    layers = model.n_layers
    dtype = model.dtype_bytes
    b = comp.b_dense
    overhead = launch_overhead * layers
    rows = []

    for op, (n, k, copies, active) in dense_shapes(model).items():
        compute = 2 * b * n * k * layers * active
        mem = (n * k * copies + b * k * active + b * n * active) * dtype * layers
        if op == OP_GEMM_UG and model.is_moe:
            # expert router
            compute += 2 * b * model.d_model * model.moe_experts * layers
            mem += model.d_model * model.moe_experts * dtype * layers
        rows.append(_row(op, hw, compute=compute, mem=mem, net=0.0, work=b, launch_overhead=overhead))

    e_touched = comp.e_kv_touched
    rows.append(
        _row(
            OP_DECODE_ATTENTION,
            hw,
            compute=2 * e_touched * model.r_gqa,
            mem=e_touched * dtype,
            net=0.0,
            work=e_touched,
            launch_overhead=overhead,
        )
    )

    n_prefill = comp.n_prefill_tokens
    rows.append(
        _row(
            OP_PREFILL_ATTENTION,
            hw,
            compute=4 * n_prefill * stats.p_avg * model.d_model * layers,
            mem=n_prefill * (model.kqv_out_dim + model.d_model) * dtype * layers,
            net=0.0,
            work=n_prefill,
            launch_overhead=overhead,
        )
    )

    moved = collective_bytes(b, model, hw)
    reduction = (hw.n_devices - 1) * b * model.d_model * layers
    rows.append(
        _row(
            OP_COMMUNICATION,
            hw,
            compute=reduction,
            mem=moved,
            net=moved,
            work=ACTIVATION_COPIES_PER_LAYER * b,
            launch_overhead=overhead if hw.n_devices > 1 else 0.0,
            compute_alt=2 * reduction,
        )
    )
    return rows


def dense_compute(rows: Iterable[OpResourceRow]) -> float:
    return sum(row.compute for row in rows if row.op in DENSE_OPERATIONS)


def sequential_iteration_time(rows: Iterable[OpResourceRow]) -> float:
    """Iteration latency when operations run one after another, each limited by its binding resource."""
    return sum(row.t_op for row in rows)


def total_times(rows: Iterable[OpResourceRow]) -> tuple[float, float, float]:
    rows = list(rows)
    return (
        sum(row.t_compute for row in rows),
        sum(row.t_mem for row in rows),
        sum(row.t_net for row in rows),
    )


def row_cells(row: OpResourceRow, *, table_convention: bool = False) -> tuple[float, ...]:
    """A row in the units of the published table (GFLOP, GB, ms)."""
    compute = row.compute_alt if table_convention and row.compute_alt is not None else row.compute
    t_compute = compute / row.compute * row.t_compute if row.compute else 0.0
    return (
        compute / 1e9,
        row.mem_moved / 1e9,
        row.net_moved / 1e9,
        t_compute * 1e3,
        row.t_mem * 1e3,
        row.t_net * 1e3,
    )


def reference_residuals(
    rows: Iterable[OpResourceRow],
    reference: Mapping[str, tuple[str, ...]] = REFERENCE_OP_TABLE,
) -> list[Residual]:
    """
    Compare rows against a published table, rounding each computed cell to
    the printed precision of its reference first. The Communication row is
    compared with its table convention for compute.
    """
    residuals = []
    for row in rows:
        if row.op not in reference:
            continue
        cells = row_cells(row, table_convention=row.op == OP_COMMUNICATION)
        for column, computed, printed in zip(TABLE_CSV_HEADER[1:7], cells, reference[row.op], strict=False):
            published = float(printed)
            exponent = Decimal(printed).as_tuple().exponent
            rounded = round(computed, -exponent)
            item = Residual(row.op, column, computed, published, relative_residual(rounded, published))
            if item.flagged:
                _LOGGER.warning(
                    "%s %s: computed %.4g vs published %s (%.1f%%)",
                    row.op,
                    column,
                    computed,
                    printed,
                    100 * item.residual,
                )
            residuals.append(item)
    return residuals
