"""
Helper functions

Unit-suffix parsing, fraction parsing and the small writers shared by the
report producers.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import re
import time
from collections.abc import Iterable, Mapping, Sequence
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

from .const import qfmt

_LOGGER = logging.getLogger(__name__)


def parse_quantity(value: Any, suffixes: Mapping[str, float], field: str = "value") -> float:
    """
    Normalize a number or a '<number> <suffix>' string to base units.

    Bare numbers are already in base units. A string suffix must be one of
    ``suffixes``, e.g. '2000 GB/s' with the bandwidth table gives 2e12.
    """
    if isinstance(value, bool):
        msg = f"{field}: expected a quantity, got {value!r}"
        raise ValueError(msg)
    if isinstance(value, int | float):
        return float(value)
    if not isinstance(value, str):
        msg = f"{field}: expected a quantity, got {value!r}"
        raise ValueError(msg)
    search = re.search(qfmt, value)
    if not search:
        msg = f"{field}: cannot parse quantity {value!r}"
        raise ValueError(msg)
    number, unit = search.group(1), search.group(2)
    if not unit:
        return float(number)
    if unit not in suffixes:
        msg = f"{field}: unknown unit {unit!r} in {value!r} (expected one of {', '.join(sorted(suffixes))})"
        raise ValueError(msg)
    return float(number) * suffixes[unit]


def parse_fraction(text: str | float | Fraction) -> Fraction:
    """Parse '1/4', '0.25' or a number into an exact fraction."""
    if isinstance(text, Fraction):
        return text
    try:
        if isinstance(text, float):
            return Fraction(text).limit_denominator(1 << 20)
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError) as err:
        msg = f"not a fraction: {text!r}"
        raise ValueError(msg) from err


def relative_residual(value: float, reference: float) -> float:
    if reference == 0:
        return 0.0 if value == 0 else float("inf")
    return abs(value - reference) / abs(reference)


def to_plain(obj: Any) -> Any:
    """Convert dataclasses, enums, tuples and numpy scalars into YAML-safe builtins."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, Mapping):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, list | tuple):
        return [to_plain(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return obj.item()
    return obj


def dump_yaml(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as stream:
        yaml.safe_dump(to_plain(data), stream, sort_keys=False, default_flow_style=False)
    _LOGGER.debug("Wrote %s", path)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write rows with a header; floats are written with repr for byte-stable output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else to_plain(v) for v in row])
    _LOGGER.debug("Wrote %s", path)


class SyncTimer:
    """Context manager logging the wall time spent in a block at debug level."""

    def __init__(self, label: str, logger: logging.Logger = _LOGGER) -> None:
        self.label = label
        self.logger = logger
        self.elapsed = 0.0

    def __enter__(self) -> SyncTimer:
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.elapsed = time.perf_counter() - self._start
        self.logger.debug("%s took %.6f s", self.label, self.elapsed)
