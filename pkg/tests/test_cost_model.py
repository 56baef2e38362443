"""Tests for the analytical cost model."""

import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from servecast.catalog import builtin_catalog
from servecast.const import OP_COMMUNICATION, OP_GEMM_KQV, OP_PREFILL_ATTENTION, REFERENCE_OP_TABLE
from servecast.cost_model import (
    BatchComposition,
    Classification,
    NetworkMode,
    ResourceClass,
    binding_resource,
    classify,
    classify_datasets,
    convert_throughput,
    dense_batch,
    dense_compute,
    e_kv,
    iter_time_compute,
    iter_time_memory,
    iter_time_network,
    max_requests,
    offload_bandwidth,
    op_resource_table,
    optimal_throughput,
    reference_residuals,
    row_cells,
    sequential_iteration_time,
    steady_state_composition,
    t_ratio,
)
from servecast.exceptions import InvariantError, ModelDoesNotFitError
from servecast.specs import HardwareSpec, WorkloadStats

DATASETS = ("sharegpt", "splitwise", "lmsys")


@pytest.fixture
def reference_rows(a100_x8, llama2_70b, reference_workload):
    comp = steady_state_composition(2048, reference_workload, llama2_70b)
    return op_resource_table(a100_x8, llama2_70b, comp, reference_workload)


# ============================================================================
# Tests: batch-size relations
# ============================================================================


class TestBatchSizes:
    def test_kv_capacity(self, a100_x8, llama2_70b):
        assert e_kv(a100_x8, llama2_70b) == pytest.approx(250e9)

    def test_max_requests(self, a100_x8, llama2_70b, reference_workload):
        assert max_requests(a100_x8, llama2_70b, reference_workload) == pytest.approx(1490.1, rel=1e-3)

    def test_model_does_not_fit(self, a100, llama2_70b):
        with pytest.raises(ModelDoesNotFitError, match="LLaMA-2-70B"):
            e_kv(a100, llama2_70b)

    def test_steady_state_split(self, llama2_70b, reference_workload):
        comp = steady_state_composition(2048, reference_workload, llama2_70b)
        assert comp.n_prefill_tokens == pytest.approx(2048 * 512 / 1536)
        assert comp.n_decode_tokens + comp.n_prefill_tokens == pytest.approx(2048)
        assert comp.n_padding_tokens == 0

    def test_dense_batch_inverts_steady_state(self, llama2_70b, reference_workload):
        comp = steady_state_composition(2048, reference_workload, llama2_70b)
        assert dense_batch(comp.b_req, reference_workload) == pytest.approx(2048)

    def test_dense_batch_of_max_requests(self, a100_x8, llama2_70b, reference_workload):
        b_req = max_requests(a100_x8, llama2_70b, reference_workload)
        assert dense_batch(b_req, reference_workload) == pytest.approx(b_req * 1536 / 1025)

    def test_composition_must_add_up(self):
        with pytest.raises(InvariantError, match="b_dense"):
            BatchComposition(b_req=1, b_dense=10, e_kv_touched=0, n_prefill_tokens=3, n_decode_tokens=3)

    def test_padding_counts_toward_b_dense(self):
        comp = BatchComposition(
            b_req=100, b_dense=512, e_kv_touched=0, n_prefill_tokens=0, n_decode_tokens=100, n_padding_tokens=412
        )
        assert not comp.is_empty


# ============================================================================
# Tests: iteration times and classification
# ============================================================================


class TestIterationTimes:
    def test_memory_time_h100(self):
        h100 = builtin_catalog().lookup_hardware("H100")
        assert iter_time_memory(h100) == pytest.approx(23.87e-3, rel=1e-3)

    def test_compute_time_matches_dense_rows(self, a100_x8, llama2_70b, reference_rows):
        closed_form = iter_time_compute(2048, llama2_70b, a100_x8)
        assert closed_form == pytest.approx(114.9e-3, rel=1e-3)
        dense = dense_compute(reference_rows) / a100_x8.total_compute
        assert closed_form == pytest.approx(dense, rel=0.03)

    def test_network_modes(self, a100_x8, llama2_70b):
        closed = iter_time_network(2048, llama2_70b, a100_x8, NetworkMode.CLOSED_FORM)
        detailed = iter_time_network(2048, llama2_70b, a100_x8, NetworkMode.DETAILED)
        assert detailed / closed == pytest.approx(1.75)

    def test_reference_ratio(self, a100_x8, llama2_70b, reference_workload):
        breakdown = t_ratio(a100_x8, llama2_70b, reference_workload)
        assert breakdown.t_ratio == pytest.approx(0.32, abs=0.01)
        assert breakdown.classification == Classification.COMPUTE_BOUND

    def test_binding_ties_prefer_compute(self):
        assert binding_resource(1.0, 1.0, 1.0) == ResourceClass.COMPUTE
        assert classify(1.0, 2.0, 2.0) == Classification.MEMORY_BOUND
        assert classify(1.0, 1.0, 3.0) == Classification.NETWORK_BOUND


class TestClassification:
    """Which resource bounds an iteration for common model/hardware pairs."""

    @pytest.mark.parametrize("dataset", DATASETS)
    def test_llama2_70b_is_compute_bound(self, a100_x8, llama2_70b, dataset):
        stats = builtin_catalog().lookup_workload(dataset)
        assert t_ratio(a100_x8, llama2_70b, stats).classification == Classification.COMPUTE_BOUND

    @pytest.mark.parametrize("dataset", DATASETS)
    def test_mistral_is_compute_bound(self, a100, dataset):
        model = builtin_catalog().lookup_model("Mistral-7B")
        stats = builtin_catalog().lookup_workload(dataset)
        assert t_ratio(a100, model, stats).classification == Classification.COMPUTE_BOUND

    @pytest.mark.parametrize("dataset", DATASETS)
    def test_llama2_7b_without_gqa_is_memory_bound(self, a100, llama2_7b, dataset):
        stats = builtin_catalog().lookup_workload(dataset)
        breakdown = t_ratio(a100, llama2_7b, stats)
        assert breakdown.classification == Classification.MEMORY_BOUND
        assert breakdown.t_ratio > 1

    def test_classify_every_dataset(self, a100_x8, llama2_70b):
        workloads = builtin_catalog().workloads
        result = classify_datasets(a100_x8, llama2_70b, workloads)
        assert set(result) == {w.name for w in workloads}
        assert {b.classification for b in result.values()} == {Classification.COMPUTE_BOUND}

    def test_sharegpt_ratio(self, a100_x8, llama2_70b):
        stats = builtin_catalog().lookup_workload("sharegpt")
        assert t_ratio(a100_x8, llama2_70b, stats).t_ratio == pytest.approx(0.108, abs=0.002)

    @given(st.floats(min_value=0.1, max_value=10, allow_nan=False))
    def test_scaling_every_resource_keeps_classification(self, factor):
        catalog = builtin_catalog()
        stats = catalog.lookup_workload("sharegpt")
        for hw, model in (
            (catalog.lookup_hardware("A100-80G").with_devices(8), catalog.lookup_model("LLaMA-2-70B")),
            (catalog.lookup_hardware("A100-80G"), catalog.lookup_model("LLaMA-2-7B")),
        ):
            scaled = dataclasses.replace(
                hw,
                compute=hw.compute * factor,
                mem_bw=hw.mem_bw * factor,
                net_bw=hw.net_bw * factor,
                net_bw_oneway=hw.net_bw_oneway * factor,
            )
            before, after = t_ratio(hw, model, stats), t_ratio(scaled, model, stats)
            assert after.classification == before.classification
            assert after.t_ratio == pytest.approx(before.t_ratio)

    def test_doubling_gqa_doubles_requests(self, a100_x8, llama2_70b):
        stats = builtin_catalog().lookup_workload("sharegpt")
        wider = dataclasses.replace(llama2_70b, r_gqa=2 * llama2_70b.r_gqa)
        assert max_requests(a100_x8, wider, stats) == pytest.approx(2 * max_requests(a100_x8, llama2_70b, stats))

    @pytest.mark.parametrize("dataset", DATASETS)
    def test_doubling_gqa_lowers_ratio(self, a100, llama2_7b, dataset):
        stats = builtin_catalog().lookup_workload(dataset)
        wider = dataclasses.replace(llama2_7b, r_gqa=2 * llama2_7b.r_gqa)
        assert t_ratio(a100, wider, stats).t_ratio < t_ratio(a100, llama2_7b, stats).t_ratio


# ============================================================================
# Tests: throughput bound
# ============================================================================


class TestOptimalThroughput:
    def test_eight_a100(self, a100_x8, llama2_70b):
        assert optimal_throughput(a100_x8, llama2_70b) == pytest.approx(17828.57, abs=1)

    def test_independent_of_memory(self, a100_x8, llama2_70b):
        other = dataclasses.replace(a100_x8, mem_size=2 * a100_x8.mem_size, mem_bw=3 * a100_x8.mem_bw)
        assert optimal_throughput(other, llama2_70b) == optimal_throughput(a100_x8, llama2_70b)

    @pytest.mark.parametrize("dataset", DATASETS)
    def test_independent_of_workload(self, a100_x8, llama2_70b, dataset):
        stats = builtin_catalog().lookup_workload(dataset)
        b_dense = dense_batch(max_requests(a100_x8, llama2_70b, stats), stats)
        rate = b_dense / iter_time_compute(b_dense, llama2_70b, a100_x8)
        assert rate == pytest.approx(optimal_throughput(a100_x8, llama2_70b))

    def test_effective_compute_per_device(self, llama2_70b):
        hw = HardwareSpec(name="eff", compute=260e12, mem_bw=2e12, mem_size=80e9, net_bw=600e9, n_units=108)
        assert optimal_throughput(hw, llama2_70b) == pytest.approx(1857.14, abs=1)

    def test_convert(self, reference_workload):
        decode, requests = convert_throughput(17828, reference_workload)
        assert decode == pytest.approx(11885.3, abs=1)
        assert requests == pytest.approx(11.61, abs=0.01)

    def test_moe_uses_active_parameters(self, a100_x8):
        mixtral = builtin_catalog().lookup_model("Mixtral-8x7B")
        assert optimal_throughput(a100_x8, mixtral) == pytest.approx(8 * 312e12 / (2 * 12.9e9))

    def test_offload_bandwidth(self, llama2_70b):
        required = offload_bandwidth(17828, llama2_70b)
        assert required / 2**30 == pytest.approx(5.4, rel=0.02)

    @given(st.integers(min_value=1, max_value=64))
    def test_linear_in_devices(self, n):
        hw = builtin_catalog().lookup_hardware("H100").with_devices(n)
        model = builtin_catalog().lookup_model("LLaMA-3-70B")
        one = optimal_throughput(hw.with_devices(1), model)
        assert optimal_throughput(hw, model) == pytest.approx(n * one)


# ============================================================================
# Tests: per-operation table
# ============================================================================


class TestOpResourceTable:
    def test_reproduces_published_cells(self, reference_rows):
        residuals = reference_residuals(reference_rows)
        flagged = {(r.op, r.column) for r in residuals if r.flagged}
        # published prefill memory is 2.1 GB against a computed 2.01
        assert flagged == {(OP_PREFILL_ATTENTION, "Mem_GB")}
        assert len(residuals) == 6 * len(REFERENCE_OP_TABLE)

    def test_published_zero(self, reference_rows):
        reference = {OP_GEMM_KQV: ("0", "19.5", "0", "11.01", "1.22", "0")}
        residuals = reference_residuals(reference_rows, reference)
        assert [r.column for r in residuals if r.flagged] == ["Compute_GFLOP"]
        assert residuals[0].residual == float("inf")
        assert residuals[2].residual == 0.0

    @pytest.mark.parametrize(
        "model", [m for m in builtin_catalog().models if m.name != "LLaMA-3-8B"], ids=lambda m: m.name
    )
    def test_dense_compute_tracks_active_parameters(self, a100_x8, reference_workload, model):
        comp = steady_state_composition(2048, reference_workload, model)
        rows = op_resource_table(a100_x8, model, comp, reference_workload)
        assert 0.95 <= dense_compute(rows) / (2 * 2048 * model.p_active) <= 1.05

    def test_large_vocabulary_falls_outside_dense_bound(self, a100_x8, reference_workload):
        model = builtin_catalog().lookup_model("LLaMA-3-8B")
        comp = steady_state_composition(2048, reference_workload, model)
        per_token = dense_compute(op_resource_table(a100_x8, model, comp, reference_workload)) / (2 * 2048)
        assert per_token / model.p_model < 0.95
        # the 128256-token embedding and output tables make up the rest
        assert per_token + 2 * 128256 * model.d_model == pytest.approx(model.p_model, rel=1e-3)

    def test_prefill_attention_compute(self, reference_rows):
        row = next(r for r in reference_rows if r.op == OP_PREFILL_ATTENTION)
        assert row.compute / 1e9 == pytest.approx(916.3, rel=1e-3)

    def test_prefill_attention_memory(self, reference_rows):
        row = next(r for r in reference_rows if r.op == OP_PREFILL_ATTENTION)
        n_prefill = 2048 * 512 / 1536
        # reads Q, K and V and writes the output; adding K/V cache writes would give 2.24 GB
        assert row.mem_moved == pytest.approx(n_prefill * (10240 + 8192) * 2 * 80)
        assert row.mem_moved / 1e9 == pytest.approx(2.013, rel=1e-3)

    def test_communication_reported_both_ways(self, reference_rows):
        row = next(r for r in reference_rows if r.op == OP_COMMUNICATION)
        assert row.compute_alt == 2 * row.compute
        assert row_cells(row, table_convention=True)[0] == pytest.approx(18.8, rel=0.01)
        assert row.net_moved / 1e9 == pytest.approx(75.2, rel=0.01)

    def test_every_row_has_a_binding_resource(self, reference_rows):
        for row in reference_rows:
            assert row.t_binding == max(row.t_compute, row.t_mem, row.t_net)

    def test_launch_overhead_adds_per_layer(self, a100_x8, llama2_70b, reference_workload, reference_rows):
        comp = steady_state_composition(2048, reference_workload, llama2_70b)
        slow = op_resource_table(a100_x8, llama2_70b, comp, reference_workload, launch_overhead=1e-6)
        extra = sequential_iteration_time(slow) - sequential_iteration_time(reference_rows)
        assert extra == pytest.approx(len(slow) * 80 * 1e-6)

    def test_single_device_has_no_traffic(self, a100, llama2_7b):
        stats = WorkloadStats(p_avg=128, d_avg=128)
        comp = steady_state_composition(512, stats, llama2_7b)
        rows = op_resource_table(a100, llama2_7b, comp, stats)
        comm = next(r for r in rows if r.op == OP_COMMUNICATION)
        assert comm.net_moved == 0
        assert comm.t_op == 0

    def test_pure_prefill_has_no_decode_attention(self, a100, llama2_7b):
        stats = WorkloadStats(p_avg=128, d_avg=128)
        comp = BatchComposition(b_req=4, b_dense=512, e_kv_touched=0, n_prefill_tokens=512, n_decode_tokens=0)
        rows = op_resource_table(a100, llama2_7b, comp, stats)
        decode = next(r for r in rows if r.op == "DecodeAttention")
        assert decode.compute == 0
        assert decode.mem_moved == 0

    @given(st.integers(min_value=1, max_value=4096))
    def test_sequential_time_at_least_compute_floor(self, b_dense):
        hw = builtin_catalog().lookup_hardware("A100-80G").with_devices(8)
        model = builtin_catalog().lookup_model("LLaMA-2-70B")
        stats = WorkloadStats(p_avg=512, d_avg=1024)
        rows = op_resource_table(hw, model, steady_state_composition(b_dense, stats, model), stats)
        assert sequential_iteration_time(rows) >= dense_compute(rows) / hw.total_compute * (1 - 1e-9)
