"""
Synthetic request traces

Lengths are drawn by stratified quantile sampling: the unit interval is cut
into n equal strata, one uniform draw per stratum is pushed through the
inverse CDF and the results are shuffled. Sample means then stay close to the
target even for heavy-tailed length distributions.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import replace

import numpy as np
from scipy import stats as sps

from ..const import DEFAULT_LENGTH_DISTRIBUTION, DEFAULT_SEED, LENGTH_DISTRIBUTIONS
from ..exceptions import InvariantError
from ..specs import TraceRequest, WorkloadStats

_LOGGER = logging.getLogger(__name__)


def _stratified_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    return (rng.permutation(n) + rng.random(n)) / n


def _lengths(rng: np.random.Generator, n: int, mean: float, std: float, distribution: str) -> np.ndarray:
    u = _stratified_uniform(rng, n)
    if std == 0 or mean == 0:
        values = np.full(n, mean, dtype=float)
    elif distribution == "gamma":
        shape = (mean / std) ** 2
        values = sps.gamma.ppf(u, a=shape, scale=std**2 / mean)
    else:
        values = sps.norm.ppf(u, loc=mean, scale=std)
    return np.maximum(np.rint(values), 1).astype(int)


def arrivals(rng: np.random.Generator, n: int, rate: float) -> np.ndarray:
    """Poisson arrival times at ``rate`` requests/s; all zero when rate is 0."""
    if rate < 0:
        raise InvariantError(f"rate must be >= 0, got {rate}", field="rate")
    if rate == 0:
        return np.zeros(n)
    return np.cumsum(rng.exponential(1 / rate, n))


def gen_trace(
    stats: WorkloadStats,
    n: int,
    rate: float = 0.0,
    seed: int = DEFAULT_SEED,
    distribution: str = DEFAULT_LENGTH_DISTRIBUTION,
) -> list[TraceRequest]:
    """
    ``n`` requests with lengths matching the mean and spread of ``stats``.

    ``gamma`` matches both moments without clipping; ``normal`` is clipped at
    one token, which inflates the mean when the spread exceeds it. Every
    request has at least one input and one output token.
    """
    if n < 0:
        raise InvariantError(f"n must be >= 0, got {n}", field="n")
    if distribution not in LENGTH_DISTRIBUTIONS:
        raise InvariantError(
            f"unknown distribution {distribution!r}, expected one of {', '.join(LENGTH_DISTRIBUTIONS)}",
            field="distribution",
        )
    rng = np.random.default_rng(seed)
    inputs = _lengths(rng, n, stats.p_avg, stats.p_std, distribution)
    outputs = _lengths(rng, n, stats.d_avg, stats.d_std, distribution)
    times = arrivals(rng, n, rate)
    trace = [
        TraceRequest(id=f"r{i}", arrival=float(t), input_len=int(p), output_len=int(d))
        for i, (t, p, d) in enumerate(zip(times, inputs, outputs, strict=True))
    ]
    _LOGGER.debug("Generated %d requests from %s (%s, seed %d)", n, stats.name or "stats", distribution, seed)
    return trace


def retime(trace: Sequence[TraceRequest], rate: float, seed: int = DEFAULT_SEED) -> list[TraceRequest]:
    """Same requests in the same order with fresh arrival times at ``rate``."""
    times = arrivals(np.random.default_rng(seed), len(trace), rate)
    return [replace(r, arrival=float(t)) for r, t in zip(trace, times, strict=True)]


def sample_means(trace: Sequence[TraceRequest]) -> tuple[float, float]:
    if not trace:
        return 0.0, 0.0
    return (
        float(np.mean([r.input_len for r in trace])),
        float(np.mean([r.output_len for r in trace])),
    )
