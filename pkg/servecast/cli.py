"""
Command line interface

    python -m servecast analyze   --hardware A100-80G --devices 8 --model LLaMA-2-70B --workload 512:1024
    python -m servecast search    --hardware A100-80G --devices 8 --model LLaMA-2-70B --workload 512:1024
    python -m servecast simulate  --hardware A100-80G --devices 8 --model LLaMA-2-70B --trace trace.csv
    python -m servecast gen-trace --dataset sharegpt -n 1000 --out trace.csv

Hardware, model and workload arguments take a catalog name or a YAML file;
a workload may also be written as ``P:D`` (mean prompt and output lengths).
Exit status is 0 when every requested artifact was written, 1 on any
servecast error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import colorlog
import yaml

from .autosearch import (
    GreedyParams,
    UnitAssignment,
    makespan_bounds,
    search,
    write_schedule_csv,
    write_timeline_csv,
)
from .catalog import builtin_catalog
from .config import ServecastConfig, load_config
from .const import (
    ANALYSIS_FILE,
    CANDIDATES_CSV_HEADER,
    CANDIDATES_FILE,
    DEFAULT_LENGTH_DISTRIBUTION,
    DEFAULT_SEED,
    DEFAULT_SPLIT_GRANULARITY,
    DOMAIN,
    GRAPH_FILE,
    LATENCY_BACKENDS,
    LENGTH_DISTRIBUTIONS,
    OP_COMMUNICATION,
    OP_TABLE_FILE,
    OUTPUT_FORMATS,
    REFERENCE_OP_TABLE,
    REFERENCE_TOTALS_MS,
    SCHEDULE_FILE,
    SEARCH_FILE,
    TABLE_CSV_HEADER,
    TIMELINE_FILE,
)
from .cost_model import (
    BatchComposition,
    NetworkMode,
    OpResourceRow,
    classify_datasets,
    convert_throughput,
    op_resource_table,
    optimal_throughput,
    reference_residuals,
    row_cells,
    sequential_iteration_time,
    steady_state_composition,
    t_ratio,
    total_times,
)
from .exceptions import ScheduleError, ServecastException, SimulationError, SpecError
from .helpers import dump_yaml, write_csv
from .pipeline import (
    DEFAULT_SPLIT,
    PIPELINE_BUILDERS,
    SPLIT_GROUPS,
    NanoSplit,
    PipelineGraph,
    build_sequential_pipeline,
    enumerate_splits,
    export_graph,
)
from .profiles import InterferenceMatrix, ProfileSet, load_profiles, synth_profiles
from .sim import (
    ServerConfig,
    gen_trace,
    offload_check,
    rate_sweep,
    run_offline,
    run_online,
    sample_means,
)
from .sim.backends import LatencyBackend, ScheduledBackend, make_backend
from .sim.engine import reference_stats
from .sim.report import summary_line, write_rate_sweep, write_run
from .specs import (
    HardwareSpec,
    ModelConfig,
    WorkloadStats,
    load_hardware_spec,
    load_model_config,
    load_trace,
    load_workload_stats,
    write_trace,
)

_LOGGER = logging.getLogger(__name__)

WORKLOAD_PAIR = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*:\s*(\d+(?:\.\d+)?)\s*$")
LOG_FORMAT = "%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s"
HANDLER_NAME = "servecast-cli"


# ============================================================================
# Argument resolution
# ============================================================================


def _is_file_argument(value: str) -> bool:
    return Path(value).suffix.lower() in (".yaml", ".yml") or Path(value).is_file()


def resolve_hardware(value: str, devices: int | None = None) -> HardwareSpec:
    if _is_file_argument(value):
        hardware = load_hardware_spec(value)
    else:
        hardware = builtin_catalog().lookup_hardware(value)
        if hardware is None:
            raise SpecError(f"unknown hardware {value!r}", field="hardware")
    return hardware.with_devices(devices) if devices else hardware


def resolve_model(value: str) -> ModelConfig:
    if _is_file_argument(value):
        return load_model_config(value)
    model = builtin_catalog().lookup_model(value)
    if model is None:
        raise SpecError(f"unknown model {value!r}", field="model")
    return model


def resolve_workload(value: str) -> WorkloadStats:
    if match := WORKLOAD_PAIR.match(value):
        return WorkloadStats(p_avg=float(match.group(1)), d_avg=float(match.group(2)), name=value.strip())
    if _is_file_argument(value):
        return load_workload_stats(value)
    stats = builtin_catalog().lookup_workload(value)
    if stats is None:
        raise SpecError(f"unknown workload {value!r}", field="workload")
    return stats


@dataclass(frozen=True, slots=True)
class CliConfig:
    """Resolved arguments shared by the subcommands."""

    command: str
    out_dir: Path
    fmt: str = "both"
    seed: int = DEFAULT_SEED
    hardware: HardwareSpec | None = None
    model: ModelConfig | None = None
    workload: WorkloadStats | None = None
    profiles: Path | None = None
    trace: Path | None = None
    schedule: Path | None = None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> CliConfig:
        for attr in ("profiles", "trace", "schedule"):
            value = getattr(args, attr, None)
            if value is not None and not Path(value).is_file():
                raise SpecError(f"no such file: {value}", field=attr)
        hardware = getattr(args, "hardware", None)
        model = getattr(args, "model", None)
        workload = getattr(args, "workload", None)
        return cls(
            command=args.command,
            out_dir=Path(getattr(args, "out", ".") or "."),
            fmt=getattr(args, "format", "both"),
            seed=getattr(args, "seed", DEFAULT_SEED),
            hardware=resolve_hardware(hardware, getattr(args, "devices", None)) if hardware else None,
            model=resolve_model(model) if model else None,
            workload=resolve_workload(workload) if workload else None,
            profiles=Path(args.profiles) if getattr(args, "profiles", None) else None,
            trace=Path(args.trace) if getattr(args, "trace", None) else None,
            schedule=Path(args.schedule) if getattr(args, "schedule", None) else None,
        )

    @property
    def writes_text(self) -> bool:
        return self.fmt in ("text", "both")

    @property
    def writes_csv(self) -> bool:
        return self.fmt in ("csv", "both")


# ============================================================================
# analyze
# ============================================================================


def _table_rows(rows: list[OpResourceRow], *, measured: bool = False) -> list[tuple]:
    def reference(op: str) -> str | None:
        return REFERENCE_OP_TABLE[op][6] if measured and op in REFERENCE_OP_TABLE else None

    table = [(row.op, *row_cells(row), reference(row.op)) for row in rows]
    table += [
        (f"{row.op}(table)", *row_cells(row, table_convention=True), None)
        for row in rows
        if row.op == OP_COMMUNICATION and row.compute_alt is not None
    ]
    return table


def cmd_analyze(args: argparse.Namespace, config: ServecastConfig) -> int:
    cli = CliConfig.from_args(args)
    hw, model, stats = cli.hardware, cli.model, cli.workload
    breakdown = t_ratio(hw, model, stats, NetworkMode(args.network_mode))
    b_dense = args.b_dense or round(breakdown.b_dense)
    comp = steady_state_composition(b_dense, stats, model)
    rows = op_resource_table(hw, model, comp, stats, config.profile_options.launch_overhead)
    optimal = optimal_throughput(hw, model)
    decode_rate, request_rate = convert_throughput(optimal, stats)
    t_compute, t_mem, t_net = total_times(rows)

    label = stats.name or "custom"
    print(f"{model.name} on {hw.n_devices}x{hw.name}, workload {label} (p={stats.p_avg:g}, d={stats.d_avg:g})")
    print(
        f"T_mem={breakdown.t_mem * 1e3:.2f} ms  T_compute={breakdown.t_compute * 1e3:.2f} ms  "
        f"T_net={breakdown.t_net * 1e3:.2f} ms"
    )
    print(f"T_R={breakdown.t_ratio:.3f}: {breakdown.classification}")
    if args.all_datasets:
        for name, other in classify_datasets(hw, model, builtin_catalog().workloads).items():
            print(f"  {name:<12} T_R={other.t_ratio:.3f}: {other.classification}")
    print(f"Optimal throughput: {optimal:.1f} tokens/s ({optimal / hw.n_devices:.1f} tokens/s/device)")
    print(f"  = {decode_rate:.1f} decode tokens/s, {request_rate:.2f} requests/s")
    print(f"Dense batch {b_dense}: sequential iteration {sequential_iteration_time(rows) * 1e3:.2f} ms")
    for name, *cells, _ in _table_rows(rows):
        print(f"  {name:<22}" + " ".join(f"{c:>12.2f}" for c in cells))

    residuals = reference_residuals(rows) if args.compare_reference else []
    for residual in residuals:
        if residual.flagged:
            print(f"  residual {residual.op} {residual.column}: {residual.residual:.1%}")
    if args.compare_reference:
        published = " / ".join(REFERENCE_TOTALS_MS)
        print(f"  totals {t_compute * 1e3:.2f} / {t_mem * 1e3:.2f} / {t_net * 1e3:.2f} ms, published {published} ms")

    if cli.writes_csv:
        write_csv(cli.out_dir / OP_TABLE_FILE, TABLE_CSV_HEADER, _table_rows(rows, measured=args.compare_reference))
    if cli.writes_text:
        dump_yaml(
            cli.out_dir / ANALYSIS_FILE,
            {
                "hardware": hw,
                "model": model,
                "workload": stats,
                "breakdown": breakdown,
                "optimal_throughput": optimal,
                "optimal_throughput_per_device": optimal / hw.n_devices,
                "decode_throughput": decode_rate,
                "request_throughput": request_rate,
                "b_dense": b_dense,
                "composition": comp,
                "total_times_s": {"compute": t_compute, "memory": t_mem, "network": t_net},
                "sequential_iteration_s": sequential_iteration_time(rows),
                "residuals": residuals,
            },
        )
    return 0


# ============================================================================
# search
# ============================================================================


def build_graph(
    pipeline: str,
    b_dense: float,
    comp: BatchComposition,
    n_layers: int,
    layer_multiplier: int,
    split: NanoSplit,
) -> PipelineGraph:
    """Module-level so that search workers can unpickle it."""
    if pipeline == "sequential":
        return build_sequential_pipeline(b_dense, comp, n_layers=n_layers, layer_multiplier=layer_multiplier)
    return PIPELINE_BUILDERS[pipeline](b_dense, comp, split, n_layers=n_layers, layer_multiplier=layer_multiplier)


def _search_profiles(cli: CliConfig, config: ServecastConfig, rows: list[OpResourceRow]) -> ProfileSet:
    options = config.profile_options
    profiles = ProfileSet.from_curves(
        synth_profiles(
            cli.hardware,
            cli.model,
            rows,
            options.alphas,
            launch_overhead=options.launch_overhead,
            tile_tokens=options.tile_tokens,
        )
    )
    if cli.profiles is not None:
        profiles = profiles.merge(load_profiles(cli.profiles, cli.hardware.n_units, options.alphas))
    return profiles


def cmd_search(args: argparse.Namespace, config: ServecastConfig) -> int:
    cli = CliConfig.from_args(args)
    hw, model, stats = cli.hardware, cli.model, cli.workload
    budget = hw.n_units if args.budget is None else args.budget
    if budget < 1:
        raise ScheduleError(f"--budget must be >= 1, got {budget}")
    comp = steady_state_composition(args.b_dense, stats, model)
    rows = op_resource_table(hw, model, comp, stats, config.profile_options.launch_overhead)
    profiles = _search_profiles(cli, config, rows)

    n_layers = args.layers
    multiplier = max(1, round(model.n_layers / n_layers))
    builder = partial(build_graph, args.pipeline, args.b_dense, comp, n_layers, multiplier)
    if args.pipeline == "sequential":
        splits = [DEFAULT_SPLIT]
    else:
        splits = enumerate_splits(args.splits_granularity, vary=args.vary or SPLIT_GROUPS)
    interference = InterferenceMatrix.unmanaged() if args.unmanaged else config.profile_options.interference
    params = GreedyParams(
        quantum=args.quantum or config.greedy.quantum,
        max_iters=config.greedy.max_iters if args.max_iters is None else args.max_iters,
        exhaustive_limit=config.greedy.exhaustive_limit,
    )
    result = search(builder, splits, profiles, budget, params, interference, args.workers or config.workers)
    schedule = result.best_schedule

    sequential_graph = build_graph("sequential", args.b_dense, comp, n_layers, multiplier, DEFAULT_SPLIT)
    _, sequential_makespan = makespan_bounds(sequential_graph, profiles, budget)

    print(f"Best split: {result.best_split.describe()}")
    print(f"Makespan: {schedule.makespan * 1e3:.4f} ms per graph, iteration {schedule.iteration_time * 1e3:.3f} ms")
    print(f"Bounds: lower {result.lower_bound * 1e3:.4f} ms, sequential {sequential_makespan * 1e3:.4f} ms")
    print(f"Candidates: {sum(c.feasible for c in result.candidates)} feasible of {len(result.candidates)}")

    if cli.writes_csv:
        write_schedule_csv(cli.out_dir / SCHEDULE_FILE, schedule, result.best_graph)
        write_timeline_csv(cli.out_dir / TIMELINE_FILE, schedule)
        write_csv(
            cli.out_dir / CANDIDATES_FILE,
            CANDIDATES_CSV_HEADER,
            ((c.split.describe(), c.makespan, c.feasible, c.message) for c in result.candidates),
        )
    if cli.writes_text:
        data = result.to_dict()
        data |= {
            "pipeline": args.pipeline,
            "b_dense": args.b_dense,
            "hardware": hw.name,
            "n_devices": hw.n_devices,
            "model": model.name,
            "sequential_makespan_s": sequential_makespan,
        }
        dump_yaml(cli.out_dir / SEARCH_FILE, data)
        export_graph(result.best_graph, cli.out_dir / GRAPH_FILE)
    return 0


# ============================================================================
# simulate
# ============================================================================


def _server_config(args: argparse.Namespace, config: ServecastConfig) -> ServerConfig:
    base = config.server
    options = (
        tuple(int(o) for o in args.options.split(",")) if args.options else base.dense_batch_options
    )
    return ServerConfig(
        dense_batch_options=options,
        latency_backend=args.backend or base.latency_backend,
        eos_lag_iters=args.eos_lag or base.eos_lag_iters,
        avg_decode_hint=args.decode_hint,
        offload_enabled=args.offload or base.offload_enabled,
    )


def _apply_schedule(path: Path, backend: LatencyBackend, server: ServerConfig) -> None:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        b_dense = int(data["b_dense"])
        split = NanoSplit(*(tuple(data["best_split"][f"{g}_splits"]) for g in SPLIT_GROUPS))
        assignment = UnitAssignment(dict(data["assignment"]), int(data["budget"]))
    except (OSError, yaml.YAMLError, KeyError, TypeError, ValueError) as err:
        raise SpecError(f"not a search result: {err}", path=str(path)) from err
    if b_dense not in server.dense_batch_options:
        raise SimulationError(
            f"schedule was searched for dense batch {b_dense}, "
            f"which is not one of the options {list(server.dense_batch_options)}"
        )
    if not isinstance(backend, ScheduledBackend):
        raise SimulationError(f"a schedule needs an overlapped or nanobatch backend, not {backend.name}")
    backend.preset(b_dense, split, assignment)


def cmd_simulate(args: argparse.Namespace, config: ServecastConfig) -> int:
    cli = CliConfig.from_args(args)
    hw, model = cli.hardware, cli.model
    trace = load_trace(cli.trace)
    server = _server_config(args, config)
    backend = make_backend(
        server.latency_backend,
        hw,
        model,
        reference=reference_stats(trace, server),
        profile_options=config.profile_options,
        params=config.greedy,
    )
    if cli.schedule is not None:
        _apply_schedule(cli.schedule, backend, server)

    extra = {"hardware": hw.name, "n_devices": hw.n_devices, "model": model.name, "backend": backend.name}
    if args.rates:
        rates = [float(r) for r in args.rates.split(",")]
        rows = rate_sweep(trace, rates, server, hw, model, seed=cli.seed, backend=backend)
        for row in rows:
            print(f"rate {row.rate:g} req/s: {summary_line(row.metrics)}")
        if cli.writes_csv:
            write_rate_sweep(cli.out_dir, rows)
        return 0

    run = run_online if args.mode == "online" else run_offline
    metrics = run(trace, server, hw, model, backend=backend)
    offload = offload_check(metrics, model, hw) if server.offload_enabled else None
    print(summary_line(metrics))
    write_run(cli.out_dir, metrics, offload, extra, csv=cli.writes_csv, text=cli.writes_text)
    return 0


# ============================================================================
# gen-trace
# ============================================================================


def cmd_gen_trace(args: argparse.Namespace, config: ServecastConfig) -> int:
    if args.dataset:
        stats = builtin_catalog().lookup_workload(args.dataset)
        if stats is None:
            names = ", ".join(w.name for w in builtin_catalog().workloads)
            raise SpecError(f"unknown dataset {args.dataset!r}, expected one of {names}", field="dataset")
    elif args.p_avg is not None and args.d_avg is not None:
        stats = WorkloadStats(p_avg=args.p_avg, d_avg=args.d_avg, p_std=args.p_std, d_std=args.d_std)
    else:
        raise SpecError("give --dataset or both --p-avg and --d-avg", field="dataset")
    trace = gen_trace(stats, args.n, args.rate, args.seed, args.distribution)
    write_trace(args.out, trace)
    mean_in, mean_out = sample_means(trace)
    print(f"Wrote {len(trace)} requests to {args.out}: mean input {mean_in:.1f}, mean output {mean_out:.1f}")
    return 0


# ============================================================================
# Entry point
# ============================================================================


def _add_target(parser: argparse.ArgumentParser, *, workload: bool = True) -> None:
    parser.add_argument("--hardware", default="A100-80G", help="catalog name or YAML file")
    parser.add_argument("--devices", type=int, help="number of devices (overrides the hardware entry)")
    parser.add_argument("--model", default="LLaMA-2-70B", help="catalog name or YAML file")
    if workload:
        parser.add_argument("--workload", required=True, help="catalog dataset, YAML file or P:D")


def _add_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--format", choices=OUTPUT_FORMATS, default="both")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=DOMAIN, description="LLM serving cost model, schedule search and simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--config-dir", help="directory holding servecast.yaml")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="cost model, classification and optimal throughput")
    _add_target(analyze)
    analyze.add_argument("--b-dense", type=int, help="dense batch of the per-operation table")
    analyze.add_argument(
        "--network-mode", choices=[m.value for m in NetworkMode], default=NetworkMode.DETAILED.value
    )
    analyze.add_argument(
        "--compare-reference", action="store_true", help="report residuals against the published table"
    )
    analyze.add_argument("--all-datasets", action="store_true", help="classify every catalog dataset as well")
    _add_output(analyze)
    analyze.set_defaults(func=cmd_analyze)

    search_cmd = sub.add_parser("search", help="nano-batch split and unit assignment search")
    _add_target(search_cmd)
    search_cmd.add_argument("--b-dense", type=int, default=2048)
    search_cmd.add_argument("--pipeline", choices=["sequential", *PIPELINE_BUILDERS], default="overlapped")
    search_cmd.add_argument("--profiles", help="measured profile CSV merged over the synthetic curves")
    search_cmd.add_argument("--budget", type=int, help="execution units (default: all units of the device)")
    search_cmd.add_argument("--splits-granularity", default=DEFAULT_SPLIT_GRANULARITY)
    search_cmd.add_argument("--vary", nargs="+", choices=SPLIT_GROUPS)
    search_cmd.add_argument("--layers", type=int, default=1, help="layers unrolled into the graph")
    search_cmd.add_argument("--quantum", type=int)
    search_cmd.add_argument("--max-iters", type=int)
    search_cmd.add_argument("--workers", type=int)
    search_cmd.add_argument("--unmanaged", action="store_true", help="apply GEMM slowdown next to memory-bound ops")
    _add_output(search_cmd)
    search_cmd.set_defaults(func=cmd_search)

    simulate = sub.add_parser("simulate", help="serve a trace")
    _add_target(simulate, workload=False)
    simulate.add_argument("--trace", required=True)
    simulate.add_argument("--schedule", help="search.yaml whose split and assignment the backend replays")
    simulate.add_argument("--backend", choices=LATENCY_BACKENDS)
    simulate.add_argument("--mode", choices=["offline", "online"], default="offline")
    simulate.add_argument("--rates", help="comma-separated request rates for an online sweep")
    simulate.add_argument("--options", help="comma-separated dense batch options")
    simulate.add_argument("--eos-lag", type=int)
    simulate.add_argument("--decode-hint", type=float)
    simulate.add_argument("--offload", action="store_true")
    simulate.add_argument("--seed", type=int, default=DEFAULT_SEED)
    _add_output(simulate)
    simulate.set_defaults(func=cmd_simulate)

    trace = sub.add_parser("gen-trace", help="synthetic request trace")
    trace.add_argument("--dataset", help="catalog dataset name")
    trace.add_argument("--p-avg", type=float)
    trace.add_argument("--d-avg", type=float)
    trace.add_argument("--p-std", type=float, default=0.0)
    trace.add_argument("--d-std", type=float, default=0.0)
    trace.add_argument("-n", type=int, default=1000)
    trace.add_argument("--rate", type=float, default=0.0)
    trace.add_argument("--seed", type=int, default=DEFAULT_SEED)
    trace.add_argument("--distribution", choices=LENGTH_DISTRIBUTIONS, default=DEFAULT_LENGTH_DISTRIBUTION)
    trace.add_argument("--out", default="trace.csv")
    trace.set_defaults(func=cmd_gen_trace)
    return parser


def setup_logging(config: ServecastConfig, verbose: bool = False) -> None:
    """Colored stderr logging for the package, levels from the logger section."""
    logger = logging.getLogger(DOMAIN)
    for stale in [h for h in logger.handlers if h.get_name() == HANDLER_NAME]:
        logger.removeHandler(stale)
    # bound to the stderr of this run, the previous one may be closed
    handler = colorlog.StreamHandler(sys.stderr)
    handler.set_name(HANDLER_NAME)
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else config.log_default.upper())
    for name, level in config.log_levels.items():
        logging.getLogger(name).setLevel(level.upper())


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config_dir)
        setup_logging(config, args.verbose)
        return args.func(args, config)
    except (ServecastException, OSError) as err:
        print(f"{DOMAIN}: error: {err}", file=sys.stderr)
        return 1
