"""
Hardware, model and workload descriptions

The dataclasses here are immutable once loaded. Spec files are YAML documents
validated with voluptuous, and the quantities they contain are normalized to
bytes, seconds and FLOPs on load.

Example hardware file::

    hardware:
      name: A100-80G
      compute: 312 TFLOP/s
      mem_bw: 2000 GB/s
      mem_size: 80 GB
      net_bw: 600 GB/s
      n_units: 108
      n_devices: 8
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import voluptuous as vol
import yaml

from .const import (
    BANDWIDTH_SUFFIXES,
    BYTE_SUFFIXES,
    COUNT_SUFFIXES,
    DTYPE_BYTES,
    FLOP_RATE_SUFFIXES,
    TRACE_CSV_HEADER,
    VALID_DTYPE_BYTES,
)
from .exceptions import InvariantError, SpecError, TraceError
from .helpers import parse_quantity

_LOGGER = logging.getLogger(__name__)

DEFAULT_HOST_LINK_BW = 32e9


@dataclass(frozen=True, slots=True)
class HardwareSpec:
    """Per-device capacities of one accelerator type and how many of them serve a model."""

    name: str
    compute: float  # FLOP/s per device
    mem_bw: float  # B/s per device
    mem_size: float  # B per device
    net_bw: float  # B/s per device, bidirectional
    n_units: int  # execution units per device
    n_devices: int = 1
    net_bw_oneway: float | None = None
    host_link_bw: float = DEFAULT_HOST_LINK_BW
    source: str = ""

    def __post_init__(self) -> None:
        if self.net_bw_oneway is None:
            object.__setattr__(self, "net_bw_oneway", self.net_bw / 2)
        for field in ("compute", "mem_bw", "mem_size", "net_bw", "net_bw_oneway", "host_link_bw"):
            if not getattr(self, field) > 0:
                raise InvariantError(f"must be strictly positive, got {getattr(self, field)!r}", field=field)
        if self.n_devices < 1:
            raise InvariantError(f"must be >= 1, got {self.n_devices}", field="n_devices")
        if self.n_units < 1:
            raise InvariantError(f"must be >= 1, got {self.n_units}", field="n_units")
        if self.net_bw_oneway > self.net_bw:
            raise InvariantError("net_bw_oneway must not exceed net_bw", field="net_bw_oneway")

    @property
    def ratio(self) -> float:
        """Compute to memory-bandwidth ratio in FLOP/B."""
        return self.compute / self.mem_bw

    @property
    def total_compute(self) -> float:
        return self.compute * self.n_devices

    @property
    def total_mem_size(self) -> float:
        return self.mem_size * self.n_devices

    def with_devices(self, n_devices: int) -> HardwareSpec:
        return dataclasses.replace(self, n_devices=n_devices)


@dataclass(frozen=True, slots=True)
class ModelConfig:
    """Architecture constants of a decoder-only transformer."""

    name: str
    d_model: int
    n_layers: int
    p_model: float
    r_gqa: int
    dtype_bytes: int
    d_intermediate: int
    kqv_out_dim: int | None = None
    moe_experts: int = 1
    moe_top_k: int = 1
    p_active: float | None = None
    source: str = ""

    def __post_init__(self) -> None:
        for field in ("d_model", "n_layers", "r_gqa", "d_intermediate", "moe_experts", "moe_top_k"):
            if getattr(self, field) < 1:
                raise InvariantError(f"must be >= 1, got {getattr(self, field)}", field=field)
        if not self.p_model > 0:
            raise InvariantError(f"must be > 0, got {self.p_model}", field="p_model")
        if self.dtype_bytes not in VALID_DTYPE_BYTES:
            raise InvariantError(f"must be one of {VALID_DTYPE_BYTES}, got {self.dtype_bytes}", field="dtype_bytes")
        if self.d_model % self.r_gqa:
            raise InvariantError(f"d_model {self.d_model} is not divisible by r_gqa {self.r_gqa}", field="r_gqa")
        if self.moe_top_k > self.moe_experts:
            raise InvariantError("moe_top_k must not exceed moe_experts", field="moe_top_k")
        if self.kqv_out_dim is None:
            object.__setattr__(self, "kqv_out_dim", self.d_model + 2 * self.d_model // self.r_gqa)
        elif self.kqv_out_dim < 1:
            raise InvariantError(f"must be >= 1, got {self.kqv_out_dim}", field="kqv_out_dim")
        if self.p_active is None:
            object.__setattr__(self, "p_active", self.p_model)
        elif not 0 < self.p_active <= self.p_model:
            raise InvariantError("p_active must be in (0, p_model]", field="p_active")

    @property
    def weight_bytes(self) -> float:
        return self.p_model * self.dtype_bytes

    @property
    def kv_elements_per_token(self) -> float:
        """KV-cache elements stored per token over all layers."""
        return 2 * self.d_model * self.n_layers / self.r_gqa

    @property
    def kv_bytes_per_token(self) -> float:
        return self.kv_elements_per_token * self.dtype_bytes

    @property
    def is_moe(self) -> bool:
        return self.moe_experts > 1


@dataclass(frozen=True, slots=True)
class WorkloadStats:
    """Mean (and optional spread) of prompt and output lengths."""

    p_avg: float
    d_avg: float
    p_std: float = 0.0
    d_std: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        for field in ("p_avg", "d_avg", "p_std", "d_std"):
            if getattr(self, field) < 0:
                raise InvariantError(f"must be >= 0, got {getattr(self, field)}", field=field)
        if self.p_avg == 0 and self.d_avg == 0:
            raise InvariantError("p_avg and d_avg cannot both be zero", field="p_avg")


@dataclass(frozen=True, slots=True)
class TraceRequest:
    id: str
    arrival: float
    input_len: int
    output_len: int

    def __post_init__(self) -> None:
        if self.input_len < 1:
            raise InvariantError(f"input_len must be >= 1, got {self.input_len}", field="input_len")
        if self.output_len < 0:
            raise InvariantError(f"output_len must be >= 0, got {self.output_len}", field="output_len")
        if self.arrival < 0:
            raise InvariantError(f"arrival must be >= 0, got {self.arrival}", field="arrival_s")


# ============================================================================
# Schemas
# ============================================================================


def quantity(suffixes: dict[str, float]):
    """Voluptuous validator normalizing unit-suffixed quantities."""

    def validator(value: Any) -> float:
        try:
            return parse_quantity(value, suffixes)
        except ValueError as err:
            raise vol.Invalid(str(err)) from err

    return validator


def dtype(value: Any) -> int:
    if isinstance(value, str):
        if value.lower() in DTYPE_BYTES:
            return DTYPE_BYTES[value.lower()]
        if not value.strip().isdigit():
            msg = f"unknown dtype {value!r}"
            raise vol.Invalid(msg)
    return int(value)


def count(value: Any) -> int:
    try:
        number = parse_quantity(value, COUNT_SUFFIXES)
    except ValueError as err:
        raise vol.Invalid(str(err)) from err
    if number != int(number):
        msg = f"expected a whole number, got {value!r}"
        raise vol.Invalid(msg)
    return int(number)


HARDWARE_SCHEMA = vol.Schema(
    {
        vol.Required("name"): str,
        vol.Required("compute"): quantity(FLOP_RATE_SUFFIXES),
        vol.Required("mem_bw"): quantity(BANDWIDTH_SUFFIXES),
        vol.Required("mem_size"): quantity(BYTE_SUFFIXES),
        vol.Required("net_bw"): quantity(BANDWIDTH_SUFFIXES),
        vol.Required("n_units"): count,
        vol.Optional("n_devices", default=1): count,
        vol.Optional("net_bw_oneway"): quantity(BANDWIDTH_SUFFIXES),
        vol.Optional("host_link_bw", default=DEFAULT_HOST_LINK_BW): quantity(BANDWIDTH_SUFFIXES),
        vol.Optional("source", default=""): str,
    }
)

MODEL_SCHEMA = vol.Schema(
    {
        vol.Required("name"): str,
        vol.Required("d_model"): count,
        vol.Required("n_layers"): count,
        vol.Required("p_model"): quantity(COUNT_SUFFIXES),
        vol.Required("r_gqa"): count,
        vol.Required("dtype_bytes"): dtype,
        vol.Required("d_intermediate"): count,
        vol.Optional("kqv_out_dim"): count,
        vol.Optional("moe_experts", default=1): count,
        vol.Optional("moe_top_k", default=1): count,
        vol.Optional("p_active"): quantity(COUNT_SUFFIXES),
        vol.Optional("source", default=""): str,
    }
)

WORKLOAD_SCHEMA = vol.Schema(
    vol.Any(
        {
            vol.Required("dataset"): str,
        },
        {
            vol.Required("p_avg"): vol.Coerce(float),
            vol.Required("d_avg"): vol.Coerce(float),
            vol.Optional("p_std", default=0.0): vol.Coerce(float),
            vol.Optional("d_std", default=0.0): vol.Coerce(float),
            vol.Optional("name", default=""): str,
        },
    )
)


# ============================================================================
# Loaders
# ============================================================================


def _field_line(text: str, keys: list[str]) -> int | None:
    """1-based line of a (possibly nested) mapping key in a YAML document."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for key in keys:
        if not isinstance(node, yaml.MappingNode):
            return line
        for key_node, value_node in node.value:
            if key_node.value == key:
                line = key_node.start_mark.line + 1
                node = value_node
                break
        else:
            return line
    return line


def _load_section(path: str | Path, section: str, schema: vol.Schema) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise SpecError(f"cannot read file: {err.strerror}", path=str(path)) from err
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        problem = getattr(err, "problem", None) or str(err)
        raise SpecError(f"invalid YAML: {problem}", path=str(path), line=mark.line + 1 if mark else None) from err
    if not isinstance(document, dict):
        raise SpecError("expected a mapping at the top level", path=str(path))
    prefix: list[str] = []
    if isinstance(document.get(section), dict):
        document = document[section]
        prefix = [section]
    try:
        return schema(document)
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        keys = [str(k) for k in first.path]
        raise SpecError(
            first.msg,
            path=str(path),
            field=".".join(keys) or None,
            line=_field_line(text, prefix + keys),
        ) from err


def _construct(cls, data: dict[str, Any], path: str | Path):
    try:
        return cls(**data)
    except InvariantError as err:
        err.path = str(path)
        raise


def load_hardware_spec(path: str | Path) -> HardwareSpec:
    hardware = _construct(HardwareSpec, _load_section(path, "hardware", HARDWARE_SCHEMA), path)
    _LOGGER.debug("Loaded hardware %s from %s", hardware.name, path)
    return hardware


def load_model_config(path: str | Path) -> ModelConfig:
    model = _construct(ModelConfig, _load_section(path, "model", MODEL_SCHEMA), path)
    _LOGGER.debug("Loaded model %s from %s", model.name, path)
    return model


def load_workload_stats(path: str | Path) -> WorkloadStats:
    data = _load_section(path, "workload", WORKLOAD_SCHEMA)
    if "dataset" in data:
        from .catalog import builtin_catalog  # noqa: PLC0415

        stats = builtin_catalog().lookup_workload(data["dataset"])
        if stats is None:
            raise SpecError(f"unknown dataset {data['dataset']!r}", path=str(path), field="dataset")
        return stats
    return _construct(WorkloadStats, data, path)


def _dump(section: str, obj: Any) -> str:
    data = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    return yaml.safe_dump({section: data}, sort_keys=False)


def dump_hardware_spec(hardware: HardwareSpec) -> str:
    return _dump("hardware", hardware)


def dump_model_config(model: ModelConfig) -> str:
    return _dump("model", model)


def dump_workload_stats(stats: WorkloadStats) -> str:
    return _dump("workload", stats)


# ============================================================================
# Traces
# ============================================================================


def load_trace(path: str | Path) -> list[TraceRequest]:
    """
    Read a trace CSV with header ``id,arrival_s,input_len,output_len``.

    An empty file (or one holding only the header) is an empty trace. The
    result is stably sorted by arrival.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise TraceError(f"cannot read trace: {err.strerror}", path=str(path)) from err
    if not text.strip():
        return []
    rows = csv.reader(text.splitlines())
    header = [h.strip() for h in next(rows)]
    if tuple(header) != TRACE_CSV_HEADER:
        raise TraceError(f"expected header {','.join(TRACE_CSV_HEADER)}", path=str(path), line=1)

    requests: list[TraceRequest] = []
    seen: set[str] = set()
    for line_no, row in enumerate(rows, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(TRACE_CSV_HEADER):
            raise TraceError(f"expected {len(TRACE_CSV_HEADER)} fields, got {len(row)}", path=str(path), line=line_no)
        request_id = row[0].strip()
        if request_id in seen:
            raise TraceError(f"duplicate id {request_id!r}", path=str(path), line=line_no, field="id")
        try:
            request = TraceRequest(
                id=request_id,
                arrival=float(row[1]),
                input_len=int(row[2]),
                output_len=int(row[3]),
            )
        except ValueError as err:
            raise TraceError(f"malformed record: {err}", path=str(path), line=line_no) from err
        except InvariantError as err:
            raise TraceError(err.message, path=str(path), line=line_no, field=err.field) from err
        seen.add(request_id)
        requests.append(request)

    requests.sort(key=lambda r: r.arrival)
    _LOGGER.debug("Loaded %d requests from %s", len(requests), path)
    return requests


def write_trace(path: str | Path, requests: list[TraceRequest]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(TRACE_CSV_HEADER)
        for request in requests:
            writer.writerow([request.id, repr(request.arrival), request.input_len, request.output_len])
