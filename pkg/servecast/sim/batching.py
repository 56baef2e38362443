"""Dense-batch formation: continuous batching of decodes plus chunked prefill."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

from ..cost_model import BatchComposition
from ..specs import ModelConfig
from .state import Phase, ServerConfig, SimState

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class FormedBatch:
    composition: BatchComposition
    decode_ids: tuple[str, ...] = ()
    prefill_chunks: Mapping[str, int] = field(default_factory=dict)
    stalled_ids: tuple[str, ...] = ()
    prefill_context: float = 0.0

    @property
    def is_empty(self) -> bool:
        return self.composition.is_empty


EMPTY_BATCH = FormedBatch(BatchComposition(0, 0, 0, 0, 0))


def choose_dense_batch(n_decode: int, backlog: int, options: tuple[int, ...]) -> int:
    """
    Largest option not above decode + prefill backlog. Without one, or when
    it cannot hold every decode, the smallest option that holds them (the
    largest option when none does).
    """
    total = n_decode + backlog
    fitting = [o for o in options if o <= total]
    b_dense = fitting[-1] if fitting else options[0]
    if b_dense < n_decode:
        b_dense = next((o for o in options if o >= n_decode), options[-1])
    return b_dense


def form_batch(state: SimState, config: ServerConfig, model: ModelConfig) -> FormedBatch:
    """
    Every decoding (and draining) request contributes one token, oldest
    first; prefill chunks fill the rest of the dense batch in admission
    order. Unused slots are padding.
    """
    decoders = [r for r in state.active if r.phase in (Phase.DECODING, Phase.DRAINING)]
    prefillers = [r for r in state.active if r.phase == Phase.PREFILLING and r.remaining_prefill > 0]
    backlog = sum(r.remaining_prefill for r in prefillers)
    if not decoders and not backlog:
        return EMPTY_BATCH

    b_dense = choose_dense_batch(len(decoders), backlog, config.dense_batch_options)
    running, stalled = decoders[:b_dense], decoders[b_dense:]
    if stalled:
        _LOGGER.debug("dense batch %d stalls %d decodes", b_dense, len(stalled))

    room = b_dense - len(running)
    chunks: dict[str, int] = {}
    weighted_context = 0.0
    for request in prefillers:
        if room == 0:
            break
        take = min(room, request.remaining_prefill)
        chunks[request.id] = take
        weighted_context += take * (request.prefilled + take)
        room -= take
    n_prefill = sum(chunks.values())

    composition = BatchComposition(
        b_req=len(running) + len(chunks),
        b_dense=b_dense,
        e_kv_touched=sum(r.kv_tokens for r in running) * model.kv_elements_per_token,
        n_prefill_tokens=n_prefill,
        n_decode_tokens=len(running),
        n_padding_tokens=room,
    )
    return FormedBatch(
        composition=composition,
        decode_ids=tuple(r.id for r in running),
        prefill_chunks=chunks,
        stalled_ids=tuple(r.id for r in stalled),
        prefill_context=weighted_context / n_prefill if n_prefill else 0.0,
    )
