"""Run metrics of the serving simulator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

PerIterRow = tuple[float, int, float, float, float, float]


@dataclass(frozen=True, slots=True)
class IterationRecord:
    index: int
    start: float
    end: float
    b_dense: int
    n_decode: int
    n_prefill: int
    n_padding: int
    kv_bytes: float
    latency: float
    penalty: float
    utilization: tuple[float, float, float]
    completed: tuple[str, ...] = ()
    wasted: int = 0

    @property
    def per_iter_row(self) -> PerIterRow:
        return (self.end, self.b_dense, self.kv_bytes, *self.utilization)


@dataclass(frozen=True, slots=True)
class SimMetrics:
    """
    Token counts exclude padding. Emitted tokens are decode outputs including
    the ones generated after EOS (wasted); throughput counts input and
    output tokens only.
    """

    total_throughput: float = 0.0
    throughput_per_device: float = 0.0
    normalized_latency: float = 0.0
    p99_normalized_latency: float = 0.0
    latency_cdf: tuple[tuple[float, float], ...] = ()
    per_iter: tuple[PerIterRow, ...] = ()
    wasted_tokens: int = 0
    recomputed_tokens: int = 0
    padding_tokens: int = 0
    emitted_tokens: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    total_time: float = 0.0
    n_iterations: int = 0
    n_requests: int = 0
    n_completed: int = 0
    optimal_throughput: float = 0.0

    @property
    def mean_iteration_time(self) -> float:
        return self.total_time / self.n_iterations if self.n_iterations else 0.0

    @property
    def percent_of_optimal(self) -> float:
        return 100 * self.total_throughput / self.optimal_throughput if self.optimal_throughput else 0.0

    @property
    def accounted_tokens(self) -> int:
        return self.input_tokens + self.output_tokens + self.wasted_tokens

    def summary(self) -> dict[str, Any]:
        return {
            "total_throughput": self.total_throughput,
            "throughput_per_device": self.throughput_per_device,
            "optimal_throughput": self.optimal_throughput,
            "percent_of_optimal": self.percent_of_optimal,
            "normalized_latency": self.normalized_latency,
            "p99_normalized_latency": self.p99_normalized_latency,
            "total_time_s": self.total_time,
            "n_iterations": self.n_iterations,
            "mean_iteration_time_s": self.mean_iteration_time,
            "n_requests": self.n_requests,
            "n_completed": self.n_completed,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "emitted_tokens": self.emitted_tokens,
            "wasted_tokens": self.wasted_tokens,
            "recomputed_tokens": self.recomputed_tokens,
            "padding_tokens": self.padding_tokens,
        }
