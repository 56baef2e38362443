"""Tests for the command line interface."""

import csv
import io
import logging
import sys

import pytest
import yaml

from servecast.cli import HANDLER_NAME, main, resolve_workload
from servecast.exceptions import SpecError
from servecast.specs import load_trace

TARGET = ["--hardware", "A100-80G", "--devices", "8", "--model", "LLaMA-2-70B"]
TINY_TRACE = "id,arrival_s,input_len,output_len\n0,0.0,32,6\n1,0.0,64,4\n2,0.5,16,8\n"


@pytest.fixture(scope="module")
def searched(tmp_path_factory):
    """One small schedule search shared by the simulate tests."""
    out = tmp_path_factory.mktemp("search")
    config = tmp_path_factory.mktemp("config")
    argv = [
        "--config-dir",
        str(config),
        "search",
        *TARGET,
        "--workload",
        "512:1024",
        "--splits-granularity",
        "1/2",
        "--vary",
        "o",
        "--max-iters",
        "3",
        "--quantum",
        "8",
        "--out",
        str(out),
    ]
    assert main(argv) == 0
    return out


@pytest.fixture
def trace(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(TINY_TRACE, encoding="utf-8")
    return path


# ============================================================================
# Tests: logging
# ============================================================================


class TestLogging:
    def test_second_run_after_stderr_closed(self, tmp_path, monkeypatch):
        argv = ["--verbose", "gen-trace", "--p-avg", "100", "--d-avg", "50", "-n", "3"]
        first = io.StringIO()
        monkeypatch.setattr(sys, "stderr", first)
        assert main([*argv, "--out", str(tmp_path / "a.csv")]) == 0
        first.close()
        second = io.StringIO()
        monkeypatch.setattr(sys, "stderr", second)
        assert main([*argv, "--out", str(tmp_path / "b.csv")]) == 0
        assert "Generated 3 requests" in second.getvalue()

    def test_one_handler_per_process(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert main(["gen-trace", "--p-avg", "100", "--d-avg", "50", "-n", "3", "--out", str(tmp_path / name)]) == 0
        named = [h for h in logging.getLogger("servecast").handlers if h.get_name() == HANDLER_NAME]
        assert len(named) == 1


# ============================================================================
# Tests: argument resolution
# ============================================================================


class TestResolveWorkload:
    def test_pair(self):
        stats = resolve_workload("512:1024")
        assert (stats.p_avg, stats.d_avg, stats.name) == (512, 1024, "512:1024")

    def test_catalog_name(self):
        assert resolve_workload("ShareGPT").name.lower() == "sharegpt"

    def test_unknown(self):
        with pytest.raises(SpecError, match="unknown workload"):
            resolve_workload("no-such-dataset")


# ============================================================================
# Tests: analyze
# ============================================================================


class TestAnalyze:
    def test_reference_setup(self, tmp_path, capsys):
        assert main(["analyze", *TARGET, "--workload", "512:1024", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "compute-bound" in out
        assert "Optimal throughput: 17828.6 tokens/s" in out
        assert (tmp_path / "op_table.csv").is_file()
        analysis = yaml.safe_load((tmp_path / "analysis.yaml").read_text(encoding="utf-8"))
        assert analysis["optimal_throughput"] == pytest.approx(17828.57, abs=1)
        assert analysis["breakdown"]["classification"] == "compute-bound"

    def test_compare_reference(self, tmp_path, capsys):
        argv = ["analyze", *TARGET, "--workload", "512:1024", "--b-dense", "2048", "--compare-reference"]
        assert main([*argv, "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "residual PrefillAttention Mem_GB" in out
        assert "published" in out
        with (tmp_path / "op_table.csv").open(encoding="utf-8") as stream:
            names = [row[0] for row in csv.reader(stream)][1:]
        assert "GEMM-KQV" in names
        assert "Communication(table)" in names

    def test_all_datasets(self, tmp_path, capsys):
        argv = ["analyze", *TARGET, "--workload", "sharegpt", "--all-datasets", "--format", "csv"]
        assert main([*argv, "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        for name in ("splitwise", "lmsys", "sharegpt"):
            assert f"  {name:<12} T_R=" in out

    def test_detailed_network_by_default(self, tmp_path):
        t_net = {}
        for mode in (None, "detailed", "closed-form"):
            out = tmp_path / (mode or "default")
            argv = ["analyze", *TARGET, "--workload", "512:1024", "--format", "text", "--out", str(out)]
            assert main(argv if mode is None else [*argv, "--network-mode", mode]) == 0
            analysis = yaml.safe_load((out / "analysis.yaml").read_text(encoding="utf-8"))
            t_net[mode] = analysis["breakdown"]["t_net"]
        assert t_net[None] == t_net["detailed"]
        # ring share over the one-way rate on eight devices
        assert t_net["detailed"] == pytest.approx(1.75 * t_net["closed-form"])

    def test_csv_only(self, tmp_path):
        assert main(["analyze", *TARGET, "--workload", "512:1024", "--format", "csv", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "op_table.csv").is_file()
        assert not (tmp_path / "analysis.yaml").exists()

    def test_memory_bound_model(self, tmp_path, capsys):
        argv = ["analyze", "--model", "LLaMA-2-7B", "--workload", "sharegpt", "--out", str(tmp_path)]
        assert main(argv) == 0
        assert "memory-bound" in capsys.readouterr().out

    def test_model_too_large(self, tmp_path, capsys):
        assert main(["analyze", "--workload", "512:1024", "--out", str(tmp_path)]) == 1
        assert "servecast: error:" in capsys.readouterr().err

    def test_unknown_model(self, tmp_path, capsys):
        argv = ["analyze", *TARGET[:4], "--model", "GPT-9", "--workload", "512:1024", "--out", str(tmp_path)]
        assert main(argv) == 1
        assert "unknown model" in capsys.readouterr().err

    def test_workload_required(self):
        with pytest.raises(SystemExit) as err:
            main(["analyze", *TARGET])
        assert err.value.code == 2


# ============================================================================
# Tests: gen-trace
# ============================================================================


class TestGenTrace:
    def test_dataset(self, tmp_path, capsys):
        path = tmp_path / "trace.csv"
        assert main(["gen-trace", "--dataset", "sharegpt", "-n", "20", "--rate", "2", "--out", str(path)]) == 0
        assert "Wrote 20 requests" in capsys.readouterr().out
        requests = load_trace(path)
        assert len(requests) == 20
        assert [r.arrival for r in requests] == sorted(r.arrival for r in requests)

    def test_explicit_lengths(self, tmp_path):
        path = tmp_path / "trace.csv"
        assert main(["gen-trace", "--p-avg", "100", "--d-avg", "50", "-n", "5", "--out", str(path)]) == 0
        assert len(load_trace(path)) == 5

    def test_same_seed_same_file(self, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (first, second):
            assert main(["gen-trace", "--dataset", "lmsys", "-n", "10", "--seed", "3", "--out", str(path)]) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_unknown_dataset(self, tmp_path, capsys):
        assert main(["gen-trace", "--dataset", "nope", "--out", str(tmp_path / "t.csv")]) == 1
        assert "unknown dataset" in capsys.readouterr().err

    def test_needs_lengths(self, tmp_path):
        assert main(["gen-trace", "--p-avg", "100", "--out", str(tmp_path / "t.csv")]) == 1


# ============================================================================
# Tests: search
# ============================================================================


class TestSearch:
    def test_artifacts(self, searched):
        for name in ("schedule.csv", "timeline.csv", "candidates.csv", "search.yaml", "graph.yaml"):
            assert (searched / name).is_file(), name

    def test_search_result(self, searched):
        data = yaml.safe_load((searched / "search.yaml").read_text(encoding="utf-8"))
        assert data["b_dense"] == 2048
        assert data["pipeline"] == "overlapped"
        assert data["best_split"]["o_splits"] == [0.5, 0.5]
        assert data["makespan_s"] <= data["sequential_makespan_s"] * (1 + 1e-9)
        assert data["lower_bound_s"] <= data["makespan_s"] * (1 + 1e-9)
        assert set(data["assignment"]) >= {"KQV1", "UGD2", "AllReduce"}

    def test_bad_budget(self, tmp_path):
        argv = ["search", *TARGET, "--workload", "512:1024", "--budget", "0", "--out", str(tmp_path)]
        assert main(argv) == 1

    def test_bad_granularity(self, tmp_path, capsys):
        argv = ["search", *TARGET, "--workload", "512:1024", "--splits-granularity", "0.3", "--out", str(tmp_path)]
        assert main(argv) == 1
        assert "divide" in capsys.readouterr().err


# ============================================================================
# Tests: simulate
# ============================================================================


class TestSimulate:
    def test_replays_schedule_deterministically(self, searched, trace, tmp_path, capsys):
        outputs = [tmp_path / "run1", tmp_path / "run2"]
        for out in outputs:
            argv = [
                "simulate",
                *TARGET,
                "--trace",
                str(trace),
                "--schedule",
                str(searched / "search.yaml"),
                "--options",
                "2048",
                "--backend",
                "overlapped",
                "--out",
                str(out),
            ]
            assert main(argv) == 0
        assert "tokens/s/device" in capsys.readouterr().out
        first, second = (out / "summary.yaml" for out in outputs)
        assert first.read_bytes() == second.read_bytes()
        summary = yaml.safe_load(first.read_text(encoding="utf-8"))
        assert summary["n_requests"] == 3
        assert summary["n_completed"] == 3
        assert summary["backend"] == "overlapped"
        assert (outputs[0] / "latency_cdf.csv").is_file()
        assert (outputs[0] / "per_iter.csv").is_file()

    def test_schedule_for_other_batch_size(self, searched, trace, tmp_path, capsys):
        argv = ["simulate", *TARGET, "--trace", str(trace), "--schedule", str(searched / "search.yaml")]
        argv += ["--options", "1024", "--backend", "overlapped", "--out", str(tmp_path)]
        assert main(argv) == 1
        assert "dense batch 2048" in capsys.readouterr().err

    def test_schedule_needs_scheduled_backend(self, searched, trace, tmp_path):
        argv = ["simulate", *TARGET, "--trace", str(trace), "--schedule", str(searched / "search.yaml")]
        argv += ["--options", "2048", "--backend", "sequential", "--out", str(tmp_path)]
        assert main(argv) == 1

    def test_sequential_backend(self, trace, tmp_path):
        argv = ["simulate", *TARGET, "--trace", str(trace), "--backend", "sequential", "--options", "512"]
        assert main([*argv, "--out", str(tmp_path)]) == 0
        summary = yaml.safe_load((tmp_path / "summary.yaml").read_text(encoding="utf-8"))
        assert summary["output_tokens"] == 18

    @pytest.mark.parametrize(
        ("fmt", "written", "absent"),
        [
            ("csv", ("latency_cdf.csv", "per_iter.csv"), ("summary.yaml",)),
            ("text", ("summary.yaml",), ("latency_cdf.csv", "per_iter.csv")),
        ],
    )
    def test_format_selects_artifacts(self, trace, tmp_path, fmt, written, absent):
        argv = ["simulate", *TARGET, "--trace", str(trace), "--backend", "sequential", "--options", "512"]
        assert main([*argv, "--format", fmt, "--out", str(tmp_path)]) == 0
        for name in written:
            assert (tmp_path / name).is_file(), name
        for name in absent:
            assert not (tmp_path / name).exists(), name

    def test_rate_sweep(self, trace, tmp_path, capsys):
        argv = ["simulate", *TARGET, "--trace", str(trace), "--backend", "sequential", "--options", "512"]
        assert main([*argv, "--rates", "1,4", "--out", str(tmp_path)]) == 0
        assert capsys.readouterr().out.count("rate ") == 2
        assert (tmp_path / "sweep.csv").is_file()

    def test_missing_trace(self, tmp_path, capsys):
        argv = ["simulate", *TARGET, "--trace", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]
        assert main(argv) == 1
        assert "no such file" in capsys.readouterr().err
