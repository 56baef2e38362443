"""
servecast.yaml loading

The file lives in the directory named by SERVECAST_CONFIG_DIR (``config`` by
default). A missing file means built-in defaults; a present but invalid one
is a ConfigError.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import voluptuous as vol
import yaml

from .autosearch import GreedyParams
from .const import (
    CONFIG_DIR_ENV,
    CONFIG_FILE_NAME,
    DEFAULT_CONFIG_DIR,
    DEFAULT_DENSE_BATCH_OPTIONS,
    DEFAULT_EOS_LAG_ITERS,
    DEFAULT_EXHAUSTIVE_LIMIT,
    DEFAULT_LATENCY_BACKEND,
    DEFAULT_MAX_ITERS,
    DEFAULT_QUANTUM,
    DEFAULT_SEARCH_WORKERS,
    LATENCY_BACKENDS,
    TIME_SUFFIXES,
)
from .cost_model import ResourceClass
from .exceptions import ConfigError, InvariantError, ProfileError, ScheduleError
from .helpers import parse_quantity
from .profiles import InterferenceMatrix
from .sim.backends import ProfileOptions
from .sim.state import ServerConfig

_LOGGER = logging.getLogger(__name__)

LOG_LEVELS = ("debug", "info", "warning", "error", "critical")
CLASS_NAMES = [c.value for c in ResourceClass]


def seconds(value: Any) -> float:
    try:
        result = parse_quantity(value, TIME_SUFFIXES, "seconds")
    except ValueError as err:
        raise vol.Invalid(str(err)) from err
    if result < 0:
        raise vol.Invalid(f"must be >= 0, got {value!r}")
    return result


def interference_entry(value: Any) -> tuple[str, str]:
    parts = str(value).split("/")
    if len(parts) != 2 or any(p.strip() not in CLASS_NAMES for p in parts):
        raise vol.Invalid(f"expected '<victim>/<running>' with classes {', '.join(CLASS_NAMES)}, got {value!r}")
    return parts[0].strip(), parts[1].strip()


CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("logger", default={}): vol.Schema(
            {
                vol.Optional("default", default="warning"): vol.All(str, vol.Lower, vol.In(LOG_LEVELS)),
                vol.Optional("logs", default={}): {str: vol.All(str, vol.Lower, vol.In(LOG_LEVELS))},
            }
        ),
        vol.Optional("profiles", default={}): vol.Schema(
            {
                vol.Optional("alpha", default={}): {
                    vol.In(CLASS_NAMES): vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
                },
                vol.Optional("launch_overhead_s", default=0.0): seconds,
                vol.Optional("dense_tile_tokens", default=0): vol.All(int, vol.Range(min=0)),
                vol.Optional("interference", default={}): {
                    interference_entry: vol.All(vol.Coerce(float), vol.Range(min=1))
                },
            }
        ),
        vol.Optional("server", default={}): vol.Schema(
            {
                vol.Optional("dense_batch_options", default=list(DEFAULT_DENSE_BATCH_OPTIONS)): [
                    vol.All(int, vol.Range(min=1))
                ],
                vol.Optional("latency_backend", default=DEFAULT_LATENCY_BACKEND): vol.In(LATENCY_BACKENDS),
                vol.Optional("eos_lag_iters", default=DEFAULT_EOS_LAG_ITERS): vol.All(int, vol.Range(min=1)),
                vol.Optional("offload_enabled", default=False): bool,
            }
        ),
        vol.Optional("search", default={}): vol.Schema(
            {
                vol.Optional("quantum", default=DEFAULT_QUANTUM): vol.All(int, vol.Range(min=1)),
                vol.Optional("max_iters", default=DEFAULT_MAX_ITERS): vol.All(int, vol.Range(min=0)),
                vol.Optional("exhaustive_limit", default=DEFAULT_EXHAUSTIVE_LIMIT): vol.All(int, vol.Range(min=0)),
                vol.Optional("workers", default=DEFAULT_SEARCH_WORKERS): vol.All(int, vol.Range(min=1)),
            }
        ),
    }
)


@dataclass(frozen=True, slots=True)
class ServecastConfig:
    log_default: str = "warning"
    log_levels: dict[str, str] = field(default_factory=dict)
    profile_options: ProfileOptions = field(default_factory=ProfileOptions)
    server: ServerConfig = field(default_factory=ServerConfig)
    greedy: GreedyParams = field(default_factory=GreedyParams)
    workers: int = DEFAULT_SEARCH_WORKERS
    source: Path | None = None


def config_dir(override: str | Path | None = None) -> Path:
    return Path(override or os.environ.get(CONFIG_DIR_ENV) or DEFAULT_CONFIG_DIR)


def load_config(directory: str | Path | None = None) -> ServecastConfig:
    path = config_dir(directory) / CONFIG_FILE_NAME
    if not path.is_file():
        _LOGGER.debug("No %s, using defaults", path)
        return ServecastConfig()
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", path=str(path)) from err
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {err}", path=str(path), line=mark.line + 1 if mark else None) from err
    try:
        data = CONFIG_SCHEMA(raw)
    except vol.Invalid as err:
        field_name = ".".join(str(p) for p in err.path) or None
        raise ConfigError(err.msg, path=str(path), field=field_name) from err

    profiles, server, search = data["profiles"], data["server"], data["search"]
    try:
        interference = InterferenceMatrix(
            {(ResourceClass(v), ResourceClass(r)): f for (v, r), f in profiles["interference"].items()}
        )
        config = ServecastConfig(
            log_default=data["logger"]["default"],
            log_levels=dict(data["logger"]["logs"]),
            profile_options=ProfileOptions(
                alphas=dict(profiles["alpha"]),
                launch_overhead=profiles["launch_overhead_s"],
                tile_tokens=profiles["dense_tile_tokens"],
                interference=interference,
            ),
            server=ServerConfig(
                dense_batch_options=tuple(server["dense_batch_options"]),
                latency_backend=server["latency_backend"],
                eos_lag_iters=server["eos_lag_iters"],
                offload_enabled=server["offload_enabled"],
            ),
            greedy=GreedyParams(
                quantum=search["quantum"],
                max_iters=search["max_iters"],
                exhaustive_limit=search["exhaustive_limit"],
            ),
            workers=search["workers"],
            source=path,
        )
    except (InvariantError, ProfileError, ScheduleError) as err:
        raise ConfigError(str(err), path=str(path)) from err
    _LOGGER.debug("Loaded configuration from %s", path)
    return config
