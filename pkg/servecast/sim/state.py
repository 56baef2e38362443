"""Server configuration and mutable per-request state of the serving simulator."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from .._compat import StrEnum

from ..const import (
    DEFAULT_DENSE_BATCH_OPTIONS,
    DEFAULT_EOS_LAG_ITERS,
    DEFAULT_LATENCY_BACKEND,
    DISCARD_POLICIES,
    LATENCY_BACKENDS,
)
from ..exceptions import InvariantError
from ..specs import TraceRequest


@dataclass(frozen=True, slots=True)
class ServerConfig:
    """
    Serving policy. ``avg_decode_hint`` is the decode length assumed by the
    peak-memory prediction; None takes the trace's mean output length.
    """

    dense_batch_options: tuple[int, ...] = DEFAULT_DENSE_BATCH_OPTIONS
    latency_backend: str = DEFAULT_LATENCY_BACKEND
    eos_lag_iters: int = DEFAULT_EOS_LAG_ITERS
    avg_decode_hint: float | None = None
    discard_policy: str = "youngest"
    offload_enabled: bool = False

    def __post_init__(self) -> None:
        options = tuple(int(o) for o in self.dense_batch_options)
        object.__setattr__(self, "dense_batch_options", options)
        if not options:
            raise InvariantError("at least one dense batch option is required", field="dense_batch_options")
        if any(o < 1 for o in options):
            raise InvariantError(f"options must be >= 1: {options}", field="dense_batch_options")
        if any(b <= a for a, b in zip(options, options[1:], strict=False)):
            raise InvariantError(f"options must be strictly increasing: {options}", field="dense_batch_options")
        if self.latency_backend not in LATENCY_BACKENDS:
            raise InvariantError(
                f"unknown backend {self.latency_backend!r}, expected one of {', '.join(LATENCY_BACKENDS)}",
                field="latency_backend",
            )
        if self.eos_lag_iters < 1:
            raise InvariantError(f"must be >= 1, got {self.eos_lag_iters}", field="eos_lag_iters")
        if self.avg_decode_hint is not None and self.avg_decode_hint < 0:
            raise InvariantError(f"must be >= 0, got {self.avg_decode_hint}", field="avg_decode_hint")
        if self.discard_policy not in DISCARD_POLICIES:
            raise InvariantError(f"unknown discard policy {self.discard_policy!r}", field="discard_policy")

    @property
    def max_option(self) -> int:
        return self.dense_batch_options[-1]


class Phase(StrEnum):
    QUEUED = "queued"
    PREFILLING = "prefilling"
    DECODING = "decoding"
    DRAINING = "draining"
    DONE = "done"


@dataclass(slots=True)
class RequestState:
    """
    Progress of one request. ``prefill_target`` is input_len until the
    request is discarded; afterwards it also covers the tokens already
    generated, which must be recomputed.
    """

    request: TraceRequest
    phase: Phase = Phase.QUEUED
    prefill_target: int = 0
    prefilled: int = 0
    generated: int = 0
    wasted: int = 0
    kv_tokens: int = 0
    drain_left: int = 0
    admitted_seq: int = -1
    first_token_time: float | None = None
    completion_time: float | None = None

    def __post_init__(self) -> None:
        if not self.prefill_target:
            self.prefill_target = self.request.input_len

    @property
    def id(self) -> str:
        return self.request.id

    @property
    def remaining_prefill(self) -> int:
        return self.prefill_target - self.prefilled

    @property
    def remaining_decode(self) -> int:
        return self.request.output_len - self.generated

    def complete(self, now: float) -> None:
        if self.completion_time is not None:
            raise InvariantError(f"{self.id} completed twice", field="completion_time")
        self.completion_time = now

    def discard(self) -> int:
        """Drop the KV cache and queue for recomputation; returns the tokens lost."""
        lost = self.kv_tokens
        self.prefill_target = self.request.input_len + self.generated
        self.prefilled = 0
        self.kv_tokens = 0
        self.phase = Phase.QUEUED
        self.admitted_seq = -1
        return lost


@dataclass(slots=True)
class SimState:
    """Everything one simulation run mutates."""

    pending: deque[TraceRequest] = field(default_factory=deque)
    queue: deque[RequestState] = field(default_factory=deque)
    active: list[RequestState] = field(default_factory=list)
    finished: list[RequestState] = field(default_factory=list)
    clock: float = 0.0
    iteration: int = 0
    next_seq: int = 0
    wasted_tokens: int = 0
    recomputed_tokens: int = 0
    padding_tokens: int = 0
    emitted_tokens: int = 0

    @classmethod
    def from_trace(cls, trace: list[TraceRequest]) -> SimState:
        return cls(pending=deque(sorted(trace, key=lambda r: r.arrival)))

    @property
    def kv_tokens(self) -> int:
        return sum(r.kv_tokens for r in self.active)

    def admit(self, request: RequestState) -> None:
        request.phase = Phase.PREFILLING
        request.admitted_seq = self.next_seq
        self.next_seq += 1
        self.active.append(request)

    @property
    def idle(self) -> bool:
        return not (self.pending or self.queue or self.active)
