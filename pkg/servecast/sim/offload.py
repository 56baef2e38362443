"""Host offload of finished requests' KV cache."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from ..cost_model import offload_bandwidth
from ..specs import HardwareSpec, ModelConfig
from .metrics import SimMetrics

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class OffloadReport:
    required_bandwidth: float
    available_bandwidth: float
    overflow: bool
    penalty_per_iteration: float


def offload_penalty(offload_bytes: float, latency: float, hw: HardwareSpec) -> float:
    """Stall added to an iteration whose offload cannot hide behind its compute."""
    return max(0.0, offload_bytes / hw.host_link_bw - latency)


def offload_check(metrics: SimMetrics, model: ModelConfig, hw: HardwareSpec) -> OffloadReport:
    """
    Host bandwidth needed to offload every token at the achieved throughput.
    Above the host link the excess stretches each iteration in proportion.
    """
    required = offload_bandwidth(metrics.total_throughput, model)
    overflow = required > hw.host_link_bw
    penalty = metrics.mean_iteration_time * (required / hw.host_link_bw - 1) if overflow else 0.0
    if overflow:
        _LOGGER.warning(
            "KV offload needs %.3g GB/s but the host link carries %.3g GB/s",
            required / 1e9,
            hw.host_link_bw / 1e9,
        )
    return OffloadReport(required, hw.host_link_bw, overflow, penalty)
