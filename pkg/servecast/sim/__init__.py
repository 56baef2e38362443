"""Iteration-level serving simulator."""

from .backends import IterationCost, LatencyBackend, ProfileOptions, SequentialBackend, make_backend
from .batching import FormedBatch, form_batch
from .engine import ServingSimulator, SweepRow, rate_sweep, run_offline, run_online
from .memory import kv_capacity_bytes, predict_peak_memory
from .metrics import IterationRecord, SimMetrics
from .offload import OffloadReport, offload_check
from .state import Phase, RequestState, ServerConfig, SimState
from .trace_gen import gen_trace, retime, sample_means

__all__ = [
    "FormedBatch",
    "IterationCost",
    "IterationRecord",
    "LatencyBackend",
    "OffloadReport",
    "Phase",
    "ProfileOptions",
    "RequestState",
    "SequentialBackend",
    "ServerConfig",
    "ServingSimulator",
    "SimMetrics",
    "SimState",
    "SweepRow",
    "form_batch",
    "gen_trace",
    "kv_capacity_bytes",
    "make_backend",
    "offload_check",
    "predict_peak_memory",
    "rate_sweep",
    "retime",
    "run_offline",
    "run_online",
    "sample_means",
]
