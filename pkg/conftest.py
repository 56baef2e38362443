"""Pytest configuration.

Setup (in a virtual environment to avoid system pip restrictions):
    python3 -m venv venv
    source venv/bin/activate
    pip install -r requirements.txt
    pytest tests/

pytest puts the directory of this root conftest on sys.path, so tests import the
servecast package normally. Shared fixtures live here.
"""

from __future__ import annotations

import pytest

from servecast.catalog import builtin_catalog
from servecast.specs import HardwareSpec, ModelConfig, WorkloadStats


@pytest.fixture(autouse=True)
def isolated_config(tmp_path_factory, monkeypatch):
    """Never pick up config/servecast.yaml from the working directory."""
    monkeypatch.setenv("SERVECAST_CONFIG_DIR", str(tmp_path_factory.mktemp("config")))


@pytest.fixture
def a100_x8() -> HardwareSpec:
    return builtin_catalog().lookup_hardware("A100-80G").with_devices(8)


@pytest.fixture
def a100() -> HardwareSpec:
    return builtin_catalog().lookup_hardware("A100-80G")


@pytest.fixture
def llama2_70b() -> ModelConfig:
    return builtin_catalog().lookup_model("LLaMA-2-70B")


@pytest.fixture
def llama2_7b() -> ModelConfig:
    return builtin_catalog().lookup_model("LLaMA-2-7B")


@pytest.fixture
def reference_workload() -> WorkloadStats:
    """Prompt 512, output 1024: the workload of the published per-operation table."""
    return WorkloadStats(p_avg=512, d_avg=1024, name="512:1024")


@pytest.fixture
def toy_model() -> ModelConfig:
    """32 bytes of KV cache per token and 2000 bytes of weights."""
    return ModelConfig(name="toy", d_model=8, n_layers=1, p_model=1000, r_gqa=1, dtype_bytes=2, d_intermediate=16)


@pytest.fixture
def toy_hardware() -> HardwareSpec:
    """6800 bytes of memory: 4800 bytes (150 tokens of the toy model) left for KV cache."""
    return HardwareSpec(name="toy", compute=1e12, mem_bw=1e11, mem_size=6800, net_bw=1e10, n_units=8)
