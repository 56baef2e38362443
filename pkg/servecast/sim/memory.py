"""
KV-cache accounting and peak-memory admission

A request is admitted only if the projected KV footprint of everything
already running, plus the candidate, stays within the memory left after the
weights at every future iteration. Each request is assumed to decode
``avg_decode_hint`` tokens (plus the lagging tokens after EOS) and to release
its cache when done.
"""

from __future__ import annotations

import logging

import numpy as np

from ..exceptions import ModelDoesNotFitError
from ..specs import HardwareSpec, ModelConfig, TraceRequest
from .state import Phase, RequestState, ServerConfig, SimState

_LOGGER = logging.getLogger(__name__)


def kv_capacity_bytes(model: ModelConfig, hw: HardwareSpec) -> float:
    capacity = hw.total_mem_size - model.weight_bytes
    if capacity <= 0:
        raise ModelDoesNotFitError(model.name, hw.name, model.weight_bytes, hw.total_mem_size)
    return capacity


def _projection(request: RequestState, hint: float, lag: int) -> tuple[float, float]:
    """(KV tokens held once prefill is done, tokens it will still add)."""
    if request.phase == Phase.DRAINING:
        return request.kv_tokens, request.drain_left
    held = request.prefill_target if request.phase in (Phase.QUEUED, Phase.PREFILLING) else request.kv_tokens
    return held, max(hint - request.generated, 0) + lag - 1


def projected_peak_tokens(held: np.ndarray, growth: np.ndarray) -> float:
    """
    Peak of sum(held + t) over requests still growing at step t. The sum only
    rises between releases, so it peaks at a release step or at t = 0.
    """
    if held.size == 0:
        return 0.0
    order = np.argsort(growth, kind="stable")
    growth, held = growth[order], held[order]
    suffix_held = np.cumsum(held[::-1])[::-1]
    first = np.searchsorted(growth, growth, side="left")
    at_release = suffix_held[first] + growth * (held.size - first)
    return float(max(held.sum(), at_release.max()))


def predict_peak_memory(
    state: SimState,
    candidate: TraceRequest | RequestState,
    config: ServerConfig,
    model: ModelConfig,
    hw: HardwareSpec,
    avg_decode_hint: float | None = None,
) -> tuple[float, bool]:
    """Projected peak KV bytes with ``candidate`` running, and whether it fits."""
    hint = avg_decode_hint if avg_decode_hint is not None else (config.avg_decode_hint or 0.0)
    lag = config.eos_lag_iters
    if isinstance(candidate, TraceRequest):
        candidate = RequestState(candidate)
    projections = [_projection(r, hint, lag) for r in state.active]
    projections.append(_projection(candidate, hint, lag))

    held = np.array([p[0] for p in projections], dtype=float)
    growth = np.array([p[1] for p in projections], dtype=float)
    peak = projected_peak_tokens(held, growth) * model.kv_bytes_per_token
    admit = peak <= kv_capacity_bytes(model, hw)
    _LOGGER.debug("%s: projected peak %.6g B, admit=%s", candidate.id, peak, admit)
    return peak, admit
