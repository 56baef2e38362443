"""
Operation latency as a function of execution units and work

An operation given u of n units reaches efficiency((1+α)x/(x+α)) of its
full-device rate, x = u/n. Small α saturates early (memory and network
kernels), large α approaches linear scaling. Measured samples, when present
and covering the query, replace the analytic curve.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .const import (
    DEFAULT_ALPHA_COMPUTE,
    DEFAULT_ALPHA_MEMORY,
    NETWORK_ANCHOR_EFFICIENCY,
    NETWORK_ANCHOR_TOTAL_UNITS,
    NETWORK_ANCHOR_UNITS,
    OP_COMMUNICATION,
    OP_DECODE_ATTENTION,
    OP_GEMM_D,
    OP_GEMM_KQV,
    OP_GEMM_O,
    OP_GEMM_UG,
    OP_PREFILL_ATTENTION,
    PROFILE_CSV_HEADER,
    UNMANAGED_GEMM_SLOWDOWN,
)
from .cost_model import OpResourceRow, ResourceClass, binding_resource
from .exceptions import ProfileError
from .pipeline import DENSE_KINDS, OpKind
from .specs import HardwareSpec, ModelConfig

_LOGGER = logging.getLogger(__name__)


def efficiency(units: float, n_units: int, alpha: float) -> float:
    """Fraction of full-device throughput reached with ``units`` of ``n_units``."""
    x = units / n_units
    if math.isinf(alpha):
        return x
    return (1 + alpha) * x / (x + alpha)


def calibrate_alpha(unit_fraction: float, target_efficiency: float) -> float:
    """Invert the efficiency curve: the α giving ``target_efficiency`` at ``unit_fraction`` of the units."""
    if not 0 < unit_fraction < target_efficiency < 1:
        msg = "need 0 < unit_fraction < target_efficiency < 1"
        raise ValueError(msg)
    return unit_fraction * (1 - target_efficiency) / (target_efficiency - unit_fraction)


DEFAULT_ALPHAS: dict[ResourceClass, float] = {
    ResourceClass.COMPUTE: DEFAULT_ALPHA_COMPUTE,
    ResourceClass.MEMORY: DEFAULT_ALPHA_MEMORY,
    ResourceClass.NETWORK: calibrate_alpha(
        NETWORK_ANCHOR_UNITS / NETWORK_ANCHOR_TOTAL_UNITS, NETWORK_ANCHOR_EFFICIENCY
    ),
}

# Rows of the per-operation table backing each pipeline node kind.
KIND_ROWS: dict[OpKind, tuple[str, ...]] = {
    OpKind.KQV: (OP_GEMM_KQV,),
    OpKind.DECODE_ATTN: (OP_DECODE_ATTENTION,),
    OpKind.PREFILL_ATTN: (OP_PREFILL_ATTENTION,),
    OpKind.O_COL: (OP_GEMM_O,),
    OpKind.O_ROW: (OP_GEMM_O,),
    OpKind.UGD: (OP_GEMM_UG, OP_GEMM_D),
    OpKind.ALL_GATHER: (OP_COMMUNICATION,),
    OpKind.ALL_REDUCE: (OP_COMMUNICATION,),
}

NATURAL_CLASSES: dict[OpKind, ResourceClass] = {
    OpKind.KQV: ResourceClass.COMPUTE,
    OpKind.DECODE_ATTN: ResourceClass.MEMORY,
    OpKind.PREFILL_ATTN: ResourceClass.COMPUTE,
    OpKind.O_COL: ResourceClass.COMPUTE,
    OpKind.O_ROW: ResourceClass.COMPUTE,
    OpKind.UGD: ResourceClass.COMPUTE,
    OpKind.ALL_GATHER: ResourceClass.NETWORK,
    OpKind.ALL_REDUCE: ResourceClass.NETWORK,
}


@dataclass(frozen=True, slots=True)
class ProfilePoint:
    units: int
    work: float
    latency: float


@dataclass(frozen=True, slots=True)
class ProfileCurve:
    """
    Latency model of one operation kind.

    ``seconds_per_work`` is the full-device latency per unit of work, so
    base_time(work) is the latency at n_units. Dense kinds may round their
    token work up to whole tiles of ``tile_tokens``.
    """

    op_kind: OpKind
    resource_class: ResourceClass
    alpha: float
    n_units: int
    seconds_per_work: float = 0.0
    launch_overhead: float = 0.0
    tile_tokens: int = 0
    points: tuple[ProfilePoint, ...] = ()

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ProfileError(f"{self.op_kind}: saturation parameter must be > 0, got {self.alpha}")
        if self.n_units < 1:
            raise ProfileError(f"{self.op_kind}: n_units must be >= 1")

    def efficiency(self, units: float) -> float:
        return efficiency(units, self.n_units, self.alpha)

    def base_time(self, work: float) -> float:
        if self.tile_tokens and work > 0:
            work = math.ceil(work / self.tile_tokens) * self.tile_tokens
        return work * self.seconds_per_work

    def _measured(self, work: float, units: int) -> float | None:
        if not self.points:
            return None
        by_work: dict[float, list[ProfilePoint]] = defaultdict(list)
        for point in self.points:
            by_work[point.work].append(point)
        works = sorted(by_work)
        if not works[0] <= work <= works[-1]:
            return None
        upper = next(w for w in works if w >= work)
        lower = upper if upper == work else max(w for w in works if w < work)

        def at(w: float) -> float | None:
            samples = sorted(by_work[w], key=lambda p: p.units)
            unit_axis = [p.units for p in samples]
            if not unit_axis[0] <= units <= unit_axis[-1]:
                return None
            return float(np.interp(units, unit_axis, [p.latency for p in samples]))

        low, high = at(lower), at(upper)
        if low is None or high is None:
            return None
        if upper == lower:
            return low
        return low + (high - low) * (work - lower) / (upper - lower)


@dataclass(frozen=True, slots=True)
class InterferenceMatrix:
    """Directional slowdown applied to an op of one class while another class co-runs."""

    slowdown: Mapping[tuple[ResourceClass, ResourceClass], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for (victim, other), factor in self.slowdown.items():
            if factor < 1:
                raise ProfileError(f"slowdown {victim}/{other} must be >= 1, got {factor}")
            if victim == other and factor != 1:
                raise ProfileError(f"diagonal slowdown {victim}/{other} must be 1")

    def factor(self, victim: ResourceClass, running: Iterable[ResourceClass]) -> float:
        return max((self.slowdown.get((victim, other), 1.0) for other in running if other != victim), default=1.0)

    @classmethod
    def managed(cls) -> InterferenceMatrix:
        return cls()

    @classmethod
    def unmanaged(cls, factor: float = UNMANAGED_GEMM_SLOWDOWN) -> InterferenceMatrix:
        return cls({(ResourceClass.COMPUTE, ResourceClass.MEMORY): factor})


@dataclass(frozen=True, slots=True)
class ProfileSet:
    """Curves keyed by operation kind."""

    curves: Mapping[OpKind, ProfileCurve]

    @classmethod
    def from_curves(cls, curves: Iterable[ProfileCurve]) -> ProfileSet:
        curves = {curve.op_kind: curve for curve in curves}
        if not curves:
            raise ProfileError("no curves")
        return cls(curves)

    def __getitem__(self, kind: OpKind) -> ProfileCurve:
        try:
            return self.curves[kind]
        except KeyError:
            raise ProfileError(f"no profile for op kind {kind}") from None

    def __iter__(self) -> Iterator[ProfileCurve]:
        return iter(self.curves.values())

    def __len__(self) -> int:
        return len(self.curves)

    @property
    def n_units(self) -> int:
        return min(curve.n_units for curve in self.curves.values())

    def merge(self, overrides: Iterable[ProfileCurve]) -> ProfileSet:
        curves = dict(self.curves)
        for curve in overrides:
            _LOGGER.debug("Measured profile replaces %s", curve.op_kind)
            curves[curve.op_kind] = curve
        return ProfileSet(curves)


def eval_latency(curve: ProfileCurve, work: float, units: int) -> float:
    if not 1 <= units <= curve.n_units:
        raise ProfileError(f"{curve.op_kind}: units {units} outside [1, {curve.n_units}]")
    measured = curve._measured(work, units)  # noqa: SLF001
    if measured is not None:
        return measured
    return curve.base_time(work) / curve.efficiency(units) + curve.launch_overhead


def _alphas(overrides: Mapping[ResourceClass | str, float] | None) -> dict[ResourceClass, float]:
    alphas = dict(DEFAULT_ALPHAS)
    for key, value in (overrides or {}).items():
        alphas[ResourceClass(key)] = float(value)
    return alphas


def synth_profiles(
    hw: HardwareSpec,
    model: ModelConfig,
    rows: Iterable[OpResourceRow],
    alphas: Mapping[ResourceClass | str, float] | None = None,
    *,
    launch_overhead: float = 0.0,
    tile_tokens: int = 0,
) -> list[ProfileCurve]:
    """
    One curve per pipeline node kind, scaled from the per-operation rows.

    Rows are totals over layers; curves are per layer, so a node's base time
    is (work / row work) of the row's binding time divided by n_layers.
    """
    alphas = _alphas(alphas)
    by_op = {row.op: row for row in rows}
    curves = []
    for kind, ops in KIND_ROWS.items():
        missing = [op for op in ops if op not in by_op]
        if missing:
            raise ProfileError(f"no {', '.join(missing)} row for {kind}")
        backing = [by_op[op] for op in ops]
        reference_work = backing[0].work
        layer_time = sum(row.t_binding for row in backing) / model.n_layers
        times = (
            sum(row.t_compute for row in backing),
            sum(row.t_mem for row in backing),
            sum(row.t_net for row in backing),
        )
        # an idle row (no decode, single device) keeps the class the kind normally binds on
        resource = binding_resource(*times) if any(times) else NATURAL_CLASSES[kind]
        curves.append(
            ProfileCurve(
                op_kind=kind,
                resource_class=resource,
                alpha=alphas[resource],
                n_units=hw.n_units,
                seconds_per_work=layer_time / reference_work if reference_work > 0 else 0.0,
                launch_overhead=launch_overhead * len(ops),
                tile_tokens=tile_tokens if kind in DENSE_KINDS else 0,
            )
        )
    return curves


def load_profiles(
    path: str | Path,
    n_units: int | None = None,
    alphas: Mapping[ResourceClass | str, float] | None = None,
) -> list[ProfileCurve]:
    """
    Read measured samples from a CSV with header
    ``op_kind,resource_class,units,work,latency_s``.

    Outside the sampled range a curve falls back to the analytic shape, with
    its per-work rate estimated from the samples.
    """
    path = Path(path)
    alphas = _alphas(alphas)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ProfileError(f"{path}: cannot read profile: {err.strerror}") from err
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ProfileError(f"{path}: no curves")
    if tuple(h.strip() for h in rows[0]) != PROFILE_CSV_HEADER:
        raise ProfileError(f"{path}:1: expected header {','.join(PROFILE_CSV_HEADER)}")

    samples: dict[OpKind, list[ProfilePoint]] = defaultdict(list)
    classes: dict[OpKind, ResourceClass] = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            kind = OpKind(row[0].strip())
        except ValueError:
            raise ProfileError(f"{path}:{line_no}: unknown op_kind {row[0].strip()!r}") from None
        try:
            resource = ResourceClass(row[1].strip())
            point = ProfilePoint(units=int(row[2]), work=float(row[3]), latency=float(row[4]))
        except (ValueError, IndexError) as err:
            raise ProfileError(f"{path}:{line_no}: malformed sample: {err}") from err
        if point.units < 1 or point.work < 0 or point.latency < 0:
            raise ProfileError(f"{path}:{line_no}: units must be >= 1, work and latency >= 0")
        if classes.setdefault(kind, resource) != resource:
            raise ProfileError(f"{path}:{line_no}: {kind} listed under two resource classes")
        samples[kind].append(point)
    if not samples:
        raise ProfileError(f"{path}: no curves")

    curves = []
    for kind, points in samples.items():
        total_units = n_units or max(p.units for p in points)
        if any(p.units > total_units for p in points):
            raise ProfileError(f"{path}: {kind} samples exceed {total_units} units")
        alpha = alphas[classes[kind]]
        _warn_non_monotone(kind, points)
        rates = [p.latency * efficiency(p.units, total_units, alpha) / p.work for p in points if p.work > 0]
        curves.append(
            ProfileCurve(
                op_kind=kind,
                resource_class=classes[kind],
                alpha=alpha,
                n_units=total_units,
                seconds_per_work=float(np.median(rates)) if rates else 0.0,
                points=tuple(points),
            )
        )
    _LOGGER.debug("Loaded %d measured curves from %s", len(curves), path)
    return curves


def _warn_non_monotone(kind: OpKind, points: list[ProfilePoint]) -> None:
    by_work: dict[float, list[ProfilePoint]] = defaultdict(list)
    for point in points:
        by_work[point.work].append(point)
    for work, group in by_work.items():
        latencies = [p.latency for p in sorted(group, key=lambda p: p.units)]
        if any(later > earlier for earlier, later in zip(latencies, latencies[1:], strict=False)):
            _LOGGER.warning("%s: latency rises with units at work %g; profile is noisy", kind, work)


def with_alpha(curves: Iterable[ProfileCurve], alpha: float) -> list[ProfileCurve]:
    """Same curves with a common saturation parameter (math.inf gives linear scaling)."""
    return [replace(curve, alpha=alpha) for curve in curves]
