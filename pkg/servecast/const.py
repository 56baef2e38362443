"""
servecast constants

Quantities are normalized to bytes, seconds, FLOPs and tokens everywhere.
Human-facing files may use the unit suffixes declared here.
"""

from __future__ import annotations

from typing import Final

DOMAIN: Final = "servecast"

CONFIG_DIR_ENV: Final = "SERVECAST_CONFIG_DIR"
DEFAULT_CONFIG_DIR: Final = "config"
CONFIG_FILE_NAME: Final = "servecast.yaml"

# Serving datatypes
DTYPE_BYTES: Final = {
    "fp8": 1,
    "int8": 1,
    "fp16": 2,
    "bf16": 2,
    "fp32": 4,
}
VALID_DTYPE_BYTES: Final = (1, 2, 4)

# Unit suffixes
_DECIMAL_PREFIXES: Final = {"": 1.0, "K": 1e3, "M": 1e6, "G": 1e9, "T": 1e12, "P": 1e15}
_BINARY_PREFIXES: Final = {"Ki": 2.0**10, "Mi": 2.0**20, "Gi": 2.0**30, "Ti": 2.0**40}

BYTE_SUFFIXES: Final = {f"{p}B": m for p, m in (_DECIMAL_PREFIXES | _BINARY_PREFIXES).items()}
BANDWIDTH_SUFFIXES: Final = {f"{p}B/s": m for p, m in (_DECIMAL_PREFIXES | _BINARY_PREFIXES).items()}
FLOP_RATE_SUFFIXES: Final = {f"{p}FLOP/s": m for p, m in _DECIMAL_PREFIXES.items()} | {
    f"{p}FLOPS": m for p, m in _DECIMAL_PREFIXES.items()
}
COUNT_SUFFIXES: Final = {"K": 1e3, "M": 1e6, "B": 1e9, "T": 1e12}
TIME_SUFFIXES: Final = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}

"""
qfmt description
^\s*                               # leading blanks
(                                  # group 1: the number
[-+]?(?:\d+(?:\.\d*)?|\.\d+)       # mantissa
(?:[eE][-+]?\d+)?                  # exponent
)
\s*
(                                  # group 2: optional unit suffix
[A-Za-z/]*
)
\s*$
"""

qfmt = r"^\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]*)\s*$"

# Resource classes
RESOURCE_COMPUTE: Final = "compute"
RESOURCE_MEMORY: Final = "memory"
RESOURCE_NETWORK: Final = "network"

# Unit-scaling saturation defaults. Network is calibrated from the anchor below.
DEFAULT_ALPHA_COMPUTE: Final = 0.5
DEFAULT_ALPHA_MEMORY: Final = 0.15
NETWORK_ANCHOR_UNITS: Final = 35
NETWORK_ANCHOR_TOTAL_UNITS: Final = 108
NETWORK_ANCHOR_EFFICIENCY: Final = 0.92

UNMANAGED_GEMM_SLOWDOWN: Final = 2.5

# Rows of the per-operation table
OP_GEMM_KQV: Final = "GEMM-KQV"
OP_GEMM_O: Final = "GEMM-O"
OP_GEMM_UG: Final = "GEMM-UG"
OP_GEMM_D: Final = "GEMM-D"
OP_DECODE_ATTENTION: Final = "DecodeAttention"
OP_PREFILL_ATTENTION: Final = "PrefillAttention"
OP_COMMUNICATION: Final = "Communication"
TABLE_OPERATIONS: Final = (
    OP_GEMM_KQV,
    OP_GEMM_O,
    OP_GEMM_UG,
    OP_GEMM_D,
    OP_DECODE_ATTENTION,
    OP_PREFILL_ATTENTION,
    OP_COMMUNICATION,
)
DENSE_OPERATIONS: Final = (OP_GEMM_KQV, OP_GEMM_O, OP_GEMM_UG, OP_GEMM_D)

# activation copies per token per layer moved by the collectives (two AG plus one AR)
ACTIVATION_COPIES_PER_LAYER: Final = 4

# Relative tolerance used when comparing residuals against published values
RESIDUAL_TOLERANCE: Final = 0.02
REL_TOL: Final = 1e-9

# Serving defaults
DEFAULT_DENSE_BATCH_OPTIONS: Final = (512, 768, 1024, 1536, 2048)
DEFAULT_EOS_LAG_ITERS: Final = 2
DEFAULT_LATENCY_BACKEND: Final = "overlapped"
LATENCY_BACKENDS: Final = ("sequential", "overlapped", "nanobatch")
DISCARD_POLICIES: Final = ("youngest",)

# Search defaults
DEFAULT_QUANTUM: Final = 1
DEFAULT_MAX_ITERS: Final = 200
DEFAULT_EXHAUSTIVE_LIMIT: Final = 4096
DEFAULT_SPLIT_GRANULARITY: Final = "1/4"
DEFAULT_SEARCH_WORKERS: Final = 1

# Trace generation
LENGTH_DISTRIBUTIONS: Final = ("gamma", "normal")
DEFAULT_LENGTH_DISTRIBUTION: Final = "gamma"
DEFAULT_SEED: Final = 0

# File formats
TRACE_CSV_HEADER: Final = ("id", "arrival_s", "input_len", "output_len")
PROFILE_CSV_HEADER: Final = ("op_kind", "resource_class", "units", "work", "latency_s")
SCHEDULE_CSV_HEADER: Final = ("node_id", "kind", "nano_index", "units", "start_s", "end_s")
TABLE_CSV_HEADER: Final = (
    "Operation",
    "Compute_GFLOP",
    "Mem_GB",
    "Net_GB",
    "Tcompute_ms",
    "Tmem_ms",
    "Tnet_ms",
    "Measured_ms",
)
LATENCY_CDF_HEADER: Final = ("percentile", "s_per_token")
PER_ITER_HEADER: Final = ("t_s", "b_dense", "kv_bytes", "util_compute", "util_mem", "util_net")
SWEEP_CSV_HEADER: Final = (
    "rate_rps",
    "total_throughput",
    "throughput_per_device",
    "normalized_latency",
    "p99_normalized_latency",
    "n_requests",
)
TIMELINE_CSV_HEADER: Final = ("t_s", "compute_units", "memory_units", "network_units")
CANDIDATES_CSV_HEADER: Final = ("split", "makespan_s", "feasible", "message")

ANALYSIS_FILE: Final = "analysis.yaml"
OP_TABLE_FILE: Final = "op_table.csv"
SCHEDULE_FILE: Final = "schedule.csv"
SEARCH_FILE: Final = "search.yaml"
CANDIDATES_FILE: Final = "candidates.csv"
TIMELINE_FILE: Final = "timeline.csv"
GRAPH_FILE: Final = "graph.yaml"
LATENCY_CDF_FILE: Final = "latency_cdf.csv"
PER_ITER_FILE: Final = "per_iter.csv"
SUMMARY_FILE: Final = "summary.yaml"
SWEEP_FILE: Final = "sweep.csv"

OUTPUT_FORMATS: Final = ("text", "csv", "both")

# Published per-operation validation table for LLaMA-2-70B on 8xA100-80G,
# b_dense=2048, p=512, d=1024. Columns follow TABLE_CSV_HEADER minus the name;
# values are kept as printed so residuals can respect their precision.
REFERENCE_OP_TABLE: Final = {
    OP_GEMM_KQV: ("27487.8", "19.5", "0", "11.01", "1.22", "0", "16.08"),
    OP_GEMM_O: ("21990.2", "16.1", "0", "8.81", "1.01", "0", "16.01"),
    OP_GEMM_UG: ("153931.6", "96.6", "0", "61.67", "6.04", "0", "69.92"),
    OP_GEMM_D: ("76965.8", "49.7", "0", "30.84", "3.11", "0", "34.96"),
    OP_DECODE_ATTENTION: ("3665.9", "462.2", "0", "1.47", "28.89", "0", "35.60"),
    OP_PREFILL_ATTENTION: ("916.3", "2.1", "0", "0.37", "0.13", "0", "4.56"),
    OP_COMMUNICATION: ("18.8", "75.2", "75.2", "0.01", "4.70", "31.33", "47.92"),
}
REFERENCE_TOTALS_MS: Final = ("114.17", "45.09", "31.33")
