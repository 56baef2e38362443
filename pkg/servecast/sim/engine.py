"""
Iteration-level serving engine

Each iteration: arrivals join the queue, queued requests are admitted in
order while the projected peak KV footprint fits, the youngest decodes are
discarded if the next iteration would overflow the cache, a dense batch is
formed and the clock advances by the backend's latency.

A decode emits one token per iteration. After its last token a request keeps
generating for eos_lag_iters - 1 more iterations, because EOS is only seen
once the following iteration has been launched; those tokens are wasted.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace

import numpy as np

from ..autosearch import GreedyParams
from ..cost_model import optimal_throughput
from ..exceptions import SimulationError
from ..helpers import SyncTimer
from ..specs import HardwareSpec, ModelConfig, TraceRequest, WorkloadStats
from .backends import LatencyBackend, ProfileOptions, make_backend
from .batching import form_batch
from .memory import kv_capacity_bytes, predict_peak_memory
from .metrics import IterationRecord, SimMetrics
from .offload import offload_penalty
from .state import Phase, RequestState, ServerConfig, SimState
from .trace_gen import retime

_LOGGER = logging.getLogger(__name__)

CDF_PERCENTILES = tuple(range(101))


def decode_hint(trace: Sequence[TraceRequest], config: ServerConfig) -> float:
    if config.avg_decode_hint is not None:
        return config.avg_decode_hint
    if not trace:
        return 1.0
    return max(1.0, sum(r.output_len for r in trace) / len(trace))


def reference_stats(trace: Sequence[TraceRequest], config: ServerConfig) -> WorkloadStats:
    """Mean lengths the overlapped backend searches its unit assignments on."""
    p_avg = sum(r.input_len for r in trace) / len(trace) if trace else 1.0
    return WorkloadStats(p_avg=p_avg, d_avg=decode_hint(trace, config), name="trace")


@dataclass(slots=True)
class ServingSimulator:
    """One model on one hardware pool serving a trace with a fixed policy."""

    hw: HardwareSpec
    model: ModelConfig
    config: ServerConfig
    backend: LatencyBackend
    hint: float

    @classmethod
    def create(
        cls,
        trace: Sequence[TraceRequest],
        config: ServerConfig,
        hw: HardwareSpec,
        model: ModelConfig,
        *,
        backend: LatencyBackend | None = None,
        profile_options: ProfileOptions | None = None,
        params: GreedyParams | None = None,
    ) -> ServingSimulator:
        if backend is None:
            backend = make_backend(
                config.latency_backend,
                hw,
                model,
                reference=reference_stats(trace, config),
                profile_options=profile_options,
                params=params,
            )
        return cls(hw, model, config, backend, decode_hint(trace, config))

    # ------------------------------------------------------------------
    # admission and capacity
    # ------------------------------------------------------------------

    def _arrive(self, state: SimState) -> None:
        while state.pending and state.pending[0].arrival <= state.clock:
            state.queue.append(RequestState(state.pending.popleft()))

    def _admit(self, state: SimState) -> None:
        while state.queue:
            candidate = state.queue[0]
            _, admit = predict_peak_memory(state, candidate, self.config, self.model, self.hw, self.hint)
            if not admit:
                if not state.active:
                    raise SimulationError(
                        f"request {candidate.id} does not fit into the KV cache even on an idle server"
                    )
                return
            state.admit(state.queue.popleft())

    def _discard_to_fit(self, state: SimState) -> None:
        """Discard the youngest decoding request until the next iteration fits the KV cache."""
        capacity = kv_capacity_bytes(self.model, self.hw) / self.model.kv_bytes_per_token
        while True:
            batch = form_batch(state, self.config, self.model)
            growth = batch.composition.n_decode_tokens + batch.composition.n_prefill_tokens
            if state.kv_tokens + growth <= capacity:
                return
            victims = [r for r in state.active if r.phase == Phase.DECODING]
            if len(state.active) < 2 or not victims:
                raise SimulationError("KV cache overflows with nothing left to discard")
            victim = max(victims, key=lambda r: r.admitted_seq)
            state.active.remove(victim)
            lost = victim.discard()
            state.recomputed_tokens += lost
            state.queue.appendleft(victim)
            _LOGGER.debug("Discarded %s, %d tokens to recompute", victim.id, lost)

    # ------------------------------------------------------------------
    # iterations
    # ------------------------------------------------------------------

    def step_iteration(self, state: SimState) -> IterationRecord | None:
        """Run one iteration on the admitted requests; None when there is nothing to batch."""
        batch = form_batch(state, self.config, self.model)
        if batch.is_empty:
            return None
        comp = batch.composition
        cost = self.backend.iteration_cost(comp, batch.prefill_context)
        start = state.clock
        end = start + cost.latency
        by_id = {r.id: r for r in state.active}
        lag = self.config.eos_lag_iters
        completed = []
        wasted = 0

        for request_id, take in batch.prefill_chunks.items():
            request = by_id[request_id]
            request.prefilled += take
            request.kv_tokens += take
            if request.remaining_prefill == 0:
                if request.remaining_decode > 0:
                    request.phase = Phase.DECODING
                else:
                    request.complete(end)
                    request.phase = Phase.DONE
                    completed.append(request_id)

        for request_id in batch.decode_ids:
            request = by_id[request_id]
            request.kv_tokens += 1
            state.emitted_tokens += 1
            if request.phase == Phase.DRAINING:
                request.wasted += 1
                wasted += 1
                request.drain_left -= 1
                if request.drain_left == 0:
                    request.phase = Phase.DONE
                continue
            request.generated += 1
            if request.first_token_time is None:
                request.first_token_time = end
            if request.remaining_decode == 0:
                request.complete(end)
                completed.append(request_id)
                request.drain_left = lag - 1
                request.phase = Phase.DRAINING if request.drain_left else Phase.DONE

        released = [r for r in state.active if r.phase == Phase.DONE]
        state.active = [r for r in state.active if r.phase != Phase.DONE]
        state.finished += released
        penalty = 0.0
        if self.config.offload_enabled and released:
            offload_bytes = sum(r.kv_tokens for r in released) * self.model.kv_bytes_per_token
            penalty = offload_penalty(offload_bytes, cost.latency, self.hw)

        state.clock = end + penalty
        state.iteration += 1
        state.wasted_tokens += wasted
        state.padding_tokens += int(comp.n_padding_tokens)
        return IterationRecord(
            index=state.iteration,
            start=start,
            end=state.clock,
            b_dense=int(comp.b_dense),
            n_decode=int(comp.n_decode_tokens),
            n_prefill=int(comp.n_prefill_tokens),
            n_padding=int(comp.n_padding_tokens),
            kv_bytes=state.kv_tokens * self.model.kv_bytes_per_token,
            latency=cost.latency,
            penalty=penalty,
            utilization=cost.utilization,
            completed=tuple(completed),
            wasted=wasted,
        )

    def run(self, trace: Sequence[TraceRequest]) -> tuple[SimMetrics, list[IterationRecord]]:
        state = SimState.from_trace(list(trace))
        records: list[IterationRecord] = []
        with SyncTimer(f"simulation of {len(trace)} requests", _LOGGER):
            while not state.idle:
                self._arrive(state)
                if not state.active and not state.queue:
                    state.clock = max(state.clock, state.pending[0].arrival)
                    continue
                self._admit(state)
                self._discard_to_fit(state)
                record = self.step_iteration(state)
                if record is None:
                    raise SimulationError(f"no progress possible at t={state.clock}")
                records.append(record)
        return self._metrics(trace, state, records), records

    def _metrics(
        self,
        trace: Sequence[TraceRequest],
        state: SimState,
        records: list[IterationRecord],
    ) -> SimMetrics:
        input_tokens = sum(r.input_len for r in trace)
        output_tokens = sum(r.output_len for r in trace)
        total_time = state.clock
        throughput = (input_tokens + output_tokens) / total_time if total_time > 0 else 0.0
        latencies = np.array(
            [
                (r.completion_time - r.request.arrival) / r.request.output_len
                for r in state.finished
                if r.request.output_len > 0
            ],
            dtype=float,
        )
        if latencies.size:
            cdf = tuple(
                (float(p), float(v))
                for p, v in zip(CDF_PERCENTILES, np.percentile(latencies, CDF_PERCENTILES), strict=True)
            )
            mean, p99 = float(latencies.mean()), float(np.percentile(latencies, 99))
        else:
            cdf, mean, p99 = (), 0.0, 0.0
        metrics = SimMetrics(
            total_throughput=throughput,
            throughput_per_device=throughput / self.hw.n_devices,
            normalized_latency=mean,
            p99_normalized_latency=p99,
            latency_cdf=cdf,
            per_iter=tuple(r.per_iter_row for r in records),
            wasted_tokens=state.wasted_tokens,
            recomputed_tokens=state.recomputed_tokens,
            padding_tokens=state.padding_tokens,
            emitted_tokens=state.emitted_tokens,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            total_time=total_time,
            n_iterations=len(records),
            n_requests=len(trace),
            n_completed=sum(1 for r in state.finished if r.completion_time is not None),
            optimal_throughput=optimal_throughput(self.hw, self.model),
        )
        _LOGGER.info(
            "Served %d requests in %.6g s: %.1f tokens/s (%.1f%% of optimal)",
            metrics.n_requests,
            total_time,
            throughput,
            metrics.percent_of_optimal,
        )
        return metrics


def run_offline(
    trace: Sequence[TraceRequest],
    config: ServerConfig,
    hw: HardwareSpec,
    model: ModelConfig,
    *,
    backend: LatencyBackend | None = None,
    profile_options: ProfileOptions | None = None,
    params: GreedyParams | None = None,
) -> SimMetrics:
    """Every request arrives at t=0; throughput is total input and output tokens over the drain time."""
    trace = [replace(r, arrival=0.0) for r in trace]
    simulator = ServingSimulator.create(
        trace, config, hw, model, backend=backend, profile_options=profile_options, params=params
    )
    return simulator.run(trace)[0]


def run_online(
    trace: Sequence[TraceRequest],
    config: ServerConfig,
    hw: HardwareSpec,
    model: ModelConfig,
    *,
    backend: LatencyBackend | None = None,
    profile_options: ProfileOptions | None = None,
    params: GreedyParams | None = None,
) -> SimMetrics:
    """Requests join the queue at their arrival times."""
    simulator = ServingSimulator.create(
        trace, config, hw, model, backend=backend, profile_options=profile_options, params=params
    )
    return simulator.run(trace)[0]


@dataclass(frozen=True, slots=True)
class SweepRow:
    rate: float
    metrics: SimMetrics

    @property
    def csv_row(self) -> tuple[float, float, float, float, float, int]:
        m = self.metrics
        return (
            self.rate,
            m.total_throughput,
            m.throughput_per_device,
            m.normalized_latency,
            m.p99_normalized_latency,
            m.n_requests,
        )


def rate_sweep(
    trace: Sequence[TraceRequest],
    rates: Iterable[float],
    config: ServerConfig,
    hw: HardwareSpec,
    model: ModelConfig,
    *,
    seed: int = 0,
    backend: LatencyBackend | None = None,
    profile_options: ProfileOptions | None = None,
    params: GreedyParams | None = None,
) -> list[SweepRow]:
    """Re-time the trace with exponential arrivals at each rate and serve it online; one row per rate."""
    if backend is None:
        backend = make_backend(
            config.latency_backend,
            hw,
            model,
            reference=reference_stats(trace, config),
            profile_options=profile_options,
            params=params,
        )
    rows = []
    for rate in rates:
        if not math.isfinite(rate) or rate < 0:
            raise SimulationError(f"request rate must be finite and >= 0, got {rate}")
        metrics = run_online(retime(trace, rate, seed), config, hw, model, backend=backend)
        rows.append(SweepRow(rate, metrics))
    return rows
