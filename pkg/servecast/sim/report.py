"""Simulator artifacts: latency CDF, per-iteration timeline, summary and rate sweep."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import Any

from ..const import (
    LATENCY_CDF_FILE,
    LATENCY_CDF_HEADER,
    PER_ITER_FILE,
    PER_ITER_HEADER,
    SUMMARY_FILE,
    SWEEP_CSV_HEADER,
    SWEEP_FILE,
)
from ..helpers import dump_yaml, write_csv
from .engine import SweepRow
from .metrics import SimMetrics
from .offload import OffloadReport


def write_latency_cdf(path: Path, metrics: SimMetrics) -> None:
    write_csv(path, LATENCY_CDF_HEADER, metrics.latency_cdf)


def write_per_iter(path: Path, metrics: SimMetrics) -> None:
    write_csv(path, PER_ITER_HEADER, metrics.per_iter)


def write_summary(
    path: Path,
    metrics: SimMetrics,
    offload: OffloadReport | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    data = {**(extra or {}), **metrics.summary()}
    if offload is not None:
        data["offload"] = offload
    dump_yaml(path, data)


def write_sweep(path: Path, rows: Sequence[SweepRow]) -> None:
    write_csv(path, SWEEP_CSV_HEADER, (row.csv_row for row in rows))


def write_run(
    out_dir: Path,
    metrics: SimMetrics,
    offload: OffloadReport | None = None,
    extra: dict[str, Any] | None = None,
    *,
    csv: bool = True,
    text: bool = True,
) -> list[Path]:
    """Write the per-run artifacts, the CSVs and/or the YAML summary; returns their paths."""
    paths = []
    if csv:
        paths += [out_dir / LATENCY_CDF_FILE, out_dir / PER_ITER_FILE]
        write_latency_cdf(paths[0], metrics)
        write_per_iter(paths[1], metrics)
    if text:
        paths.append(out_dir / SUMMARY_FILE)
        write_summary(paths[-1], metrics, offload, extra)
    return paths


def write_rate_sweep(out_dir: Path, rows: Sequence[SweepRow]) -> Path:
    path = out_dir / SWEEP_FILE
    write_sweep(path, rows)
    return path


def summary_line(metrics: SimMetrics) -> str:
    return (
        f"{metrics.throughput_per_device:.1f} tokens/s/device "
        f"({metrics.percent_of_optimal:.1f}% of optimal), "
        f"normalized latency {metrics.normalized_latency:.4g} s/token"
    )
