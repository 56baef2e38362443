"""
Built-in reference configurations

Hardware rows carry the per-device network bandwidth, FP16 compute and memory
bandwidth of the usual accelerator comparison table. Memory sizes, execution
unit counts and host links are the vendors' public data sheet values.
Model rows are public architecture constants.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

from .specs import HardwareSpec, ModelConfig, WorkloadStats

HARDWARE_CATALOG: tuple[HardwareSpec, ...] = (
    HardwareSpec(
        name="V100",
        net_bw=300e9,
        compute=125e12,
        mem_bw=900e9,
        mem_size=32e9,
        n_units=80,
        host_link_bw=16e9,
        source="NVIDIA V100 SXM2 data sheet; 80 SMs; PCIe 3.0 x16",
    ),
    HardwareSpec(
        name="A100-40G",
        net_bw=600e9,
        compute=312e12,
        mem_bw=1555e9,
        mem_size=40e9,
        n_units=108,
        host_link_bw=32e9,
        source="NVIDIA A100 data sheet; 108 SMs; PCIe 4.0 x16",
    ),
    HardwareSpec(
        name="A100-80G",
        net_bw=600e9,
        compute=312e12,
        mem_bw=2000e9,
        mem_size=80e9,
        n_units=108,
        host_link_bw=32e9,
        source="NVIDIA A100 data sheet; 108 SMs; PCIe 4.0 x16",
    ),
    HardwareSpec(
        name="H100",
        net_bw=600e9,
        compute=989e12,
        mem_bw=3352e9,
        mem_size=80e9,
        n_units=132,
        host_link_bw=64e9,
        source="NVIDIA H100 SXM data sheet; 132 SMs; PCIe 5.0 x16",
    ),
    HardwareSpec(
        name="H200",
        net_bw=900e9,
        compute=989e12,
        mem_bw=4800e9,
        mem_size=141e9,
        n_units=132,
        host_link_bw=64e9,
        source="NVIDIA H200 data sheet; 132 SMs; PCIe 5.0 x16",
    ),
    HardwareSpec(
        name="B100",
        net_bw=1800e9,
        compute=1800e12,
        mem_bw=8000e9,
        mem_size=192e9,
        # unit count not published; H100 value assumed
        n_units=132,
        host_link_bw=64e9,
        source="NVIDIA Blackwell data sheet; SM count assumed",
    ),
    HardwareSpec(
        name="B200",
        net_bw=1800e9,
        compute=2250e12,
        mem_bw=8000e9,
        mem_size=192e9,
        n_units=148,
        host_link_bw=64e9,
        source="NVIDIA Blackwell data sheet; 148 SMs",
    ),
    HardwareSpec(
        name="MI250",
        net_bw=800e9,
        compute=362e12,
        mem_bw=3352e9,
        mem_size=128e9,
        n_units=208,
        host_link_bw=32e9,
        source="AMD Instinct MI250 data sheet; 208 CUs",
    ),
    HardwareSpec(
        name="MI300",
        net_bw=1024e9,
        compute=1307e12,
        mem_bw=5300e9,
        mem_size=192e9,
        n_units=304,
        host_link_bw=64e9,
        source="AMD Instinct MI300X data sheet; 304 CUs",
    ),
)

# Published compute/memory-bandwidth ratios (FLOP/B) of the hardware rows above.
PUBLISHED_RATIOS: dict[str, int] = {
    "V100": 139,
    "A100-40G": 200,
    "A100-80G": 156,
    "H100": 295,
    "H200": 206,
    "B100": 225,
    "B200": 281,
    "MI250": 107,
    "MI300": 246,
}

MODEL_CATALOG: tuple[ModelConfig, ...] = (
    ModelConfig(
        name="LLaMA-2-70B",
        d_model=8192,
        n_layers=80,
        p_model=70e9,
        r_gqa=8,
        dtype_bytes=2,
        # 28672 reproduces the GEMM-UG and GEMM-D rows of the per-operation validation table
        d_intermediate=28672,
        source="Llama 2 model card; FFN width derived from per-operation FLOP counts",
    ),
    ModelConfig(
        name="LLaMA-2-7B",
        d_model=4096,
        n_layers=32,
        p_model=6.74e9,
        r_gqa=1,
        dtype_bytes=2,
        d_intermediate=11008,
        source="Llama 2 model card",
    ),
    ModelConfig(
        name="LLaMA-3-70B",
        d_model=8192,
        n_layers=80,
        p_model=70.6e9,
        r_gqa=8,
        dtype_bytes=2,
        d_intermediate=28672,
        source="Meta Llama 3 config.json",
    ),
    ModelConfig(
        name="LLaMA-3-8B",
        d_model=4096,
        n_layers=32,
        p_model=8.03e9,
        r_gqa=4,
        dtype_bytes=2,
        d_intermediate=14336,
        source="Meta Llama 3 config.json; 128K-token embeddings are a large share of its parameters",
    ),
    ModelConfig(
        name="Qwen2-72B",
        d_model=8192,
        n_layers=80,
        p_model=72.7e9,
        r_gqa=8,
        dtype_bytes=2,
        d_intermediate=29568,
        source="Qwen2 config.json",
    ),
    ModelConfig(
        name="Deepseek-67B",
        d_model=8192,
        n_layers=95,
        p_model=67e9,
        r_gqa=8,
        dtype_bytes=2,
        d_intermediate=22016,
        source="DeepSeek LLM 67B config.json",
    ),
    ModelConfig(
        name="Mixtral-8x7B",
        d_model=4096,
        n_layers=32,
        p_model=46.7e9,
        r_gqa=4,
        dtype_bytes=2,
        d_intermediate=14336,
        moe_experts=8,
        moe_top_k=2,
        p_active=12.9e9,
        source="Mixtral 8x7B config.json; gate folded into the up/gate projection as dense FLOPs",
    ),
    ModelConfig(
        name="Mistral-7B",
        d_model=4096,
        n_layers=32,
        p_model=7.24e9,
        r_gqa=4,
        dtype_bytes=2,
        d_intermediate=14336,
        source="Mistral 7B config.json",
    ),
)

WORKLOAD_CATALOG: tuple[WorkloadStats, ...] = (
    WorkloadStats(name="splitwise", p_avg=1155, p_std=1109, d_avg=211, d_std=163),
    WorkloadStats(name="lmsys", p_avg=102, p_std=169, d_avg=222, d_std=210),
    WorkloadStats(name="sharegpt", p_avg=246, p_std=547, d_avg=322, d_std=244),
)


def _normalize(name: str) -> str:
    return re.sub(r"[\s\-_]", "", name).lower()


@dataclass(frozen=True, slots=True)
class Catalog:
    """Read-only collection of reference configurations; lookups return None when absent."""

    hardware: tuple[HardwareSpec, ...]
    models: tuple[ModelConfig, ...]
    workloads: tuple[WorkloadStats, ...]

    def lookup_hardware(self, name: str) -> HardwareSpec | None:
        return next((h for h in self.hardware if _normalize(h.name) == _normalize(name)), None)

    def lookup_model(self, name: str) -> ModelConfig | None:
        return next((m for m in self.models if _normalize(m.name) == _normalize(name)), None)

    def lookup_workload(self, name: str) -> WorkloadStats | None:
        return next((w for w in self.workloads if _normalize(w.name) == _normalize(name)), None)

    def pairs(self) -> list[tuple[HardwareSpec, ModelConfig]]:
        return list(itertools.product(self.hardware, self.models))


def builtin_catalog() -> Catalog:
    return Catalog(hardware=HARDWARE_CATALOG, models=MODEL_CATALOG, workloads=WORKLOAD_CATALOG)
