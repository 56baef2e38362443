"""
Per-layer operation graphs with nano-batch splits

Overlapped layer (nano-batch 0 on the left, 1 on the right)::

    KQV1  KQV2            KQV3  KQV4
     |  \\/  |              |     |
    DA1-1 PF DA1-2        DA2-1 DA2-2
        \\ |  /                \\   /
      AllGather1               O2 (row-parallel, no AllGather)
          |                     |
         O1 (column-parallel)  AllReduce
          |                     |
      AllGather2              UGD2
          |
         UGD1

In unrolled mode UGD1 feeds the next layer's KQV1/KQV2 and UGD2 its KQV3/KQV4.
Each nano-batch moves four activation copies per token through its
collectives, the same traffic as the sequential layer.

Work descriptors: tokens for dense ops, KV elements for decode attention,
prefill tokens for prefill attention, activation copies for collectives.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from ._compat import StrEnum
from fractions import Fraction
from pathlib import Path

import networkx as nx

from .const import ACTIVATION_COPIES_PER_LAYER, REL_TOL
from .cost_model import BatchComposition
from .exceptions import PipelineError
from .helpers import dump_yaml, parse_fraction

_LOGGER = logging.getLogger(__name__)


class OpKind(StrEnum):
    KQV = "KQV"
    DECODE_ATTN = "DecodeAttn"
    PREFILL_ATTN = "PrefillAttn"
    O_COL = "O_col"
    O_ROW = "O_row"
    UGD = "UGD"
    ALL_GATHER = "AllGather"
    ALL_REDUCE = "AllReduce"


DENSE_KINDS = frozenset({OpKind.KQV, OpKind.O_COL, OpKind.O_ROW, OpKind.UGD})
NETWORK_KINDS = frozenset({OpKind.ALL_GATHER, OpKind.ALL_REDUCE})
SPLIT_GROUPS = ("kqv", "attn", "o", "ugd")
GROUP_WAYS = {"kqv": 4, "attn": 4, "o": 2, "ugd": 2}


@dataclass(frozen=True, slots=True)
class OpNode:
    id: str
    kind: OpKind
    nano_index: int
    work: float
    min_units: int = 1
    layer: int = 0

    def __post_init__(self) -> None:
        if self.work < 0:
            raise PipelineError(f"{self.id}: work must be >= 0, got {self.work}")
        if self.min_units < 1:
            raise PipelineError(f"{self.id}: min_units must be >= 1")


@dataclass(frozen=True, slots=True)
class NanoSplit:
    """Fractions of the batch given to each nano-batch of every operation group."""

    kqv_splits: tuple[float, ...]
    attn_splits: tuple[float, ...]
    o_splits: tuple[float, ...]
    ugd_splits: tuple[float, ...]

    def __post_init__(self) -> None:
        for group in SPLIT_GROUPS:
            fractions = getattr(self, f"{group}_splits")
            if len(fractions) != GROUP_WAYS[group]:
                raise PipelineError(f"{group}_splits needs {GROUP_WAYS[group]} fractions, got {len(fractions)}")
            if any(f <= 0 for f in fractions):
                raise PipelineError(f"{group}_splits must be positive: {fractions}")
            if abs(sum(fractions) - 1) > REL_TOL:
                raise PipelineError(f"{group}_splits must sum to 1: {fractions}")

    @property
    def key(self) -> tuple[float, ...]:
        return self.kqv_splits + self.attn_splits + self.o_splits + self.ugd_splits

    def describe(self) -> str:
        return " / ".join(",".join(f"{f:g}" for f in getattr(self, f"{g}_splits")) for g in SPLIT_GROUPS)


DEFAULT_SPLIT = NanoSplit(
    kqv_splits=(0.25, 0.25, 0.25, 0.25),
    attn_splits=(0.25, 0.25, 0.25, 0.25),
    o_splits=(0.5, 0.5),
    ugd_splits=(0.5, 0.5),
)


class PipelineGraph:
    """
    Immutable DAG of operation nodes. Reported iteration times are the
    makespan times ``layer_multiplier`` (the layers the graph stands for).
    """

    def __init__(
        self,
        nodes: Iterable[OpNode],
        edges: Iterable[tuple[str, str]],
        split: NanoSplit,
        *,
        name: str = "",
        layer_multiplier: int = 1,
    ) -> None:
        self.nodes: tuple[OpNode, ...] = tuple(nodes)
        self.edges: tuple[tuple[str, str], ...] = tuple(dict.fromkeys(edges))
        self.split = split
        self.name = name
        self.layer_multiplier = layer_multiplier

        graph = nx.DiGraph()
        for node in self.nodes:
            if node.id in graph:
                raise PipelineError(f"duplicate node id {node.id}")
            graph.add_node(node.id, node=node)
        for source, target in self.edges:
            if source not in graph or target not in graph:
                raise PipelineError(f"edge {source} -> {target} references an unknown node")
            graph.add_edge(source, target)
        if not nx.is_directed_acyclic_graph(graph):
            raise PipelineError(f"{name or 'graph'} has a cycle")
        self._graph = nx.freeze(graph)
        self._by_id = {node.id: node for node in self.nodes}
        self._rank = {
            node_id: generation
            for generation, layer in enumerate(nx.topological_generations(graph))
            for node_id in layer
        }
        self._order = tuple(nx.lexicographical_topological_sort(graph, key=lambda n: (self._rank[n], n)))

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"PipelineGraph({self.name!r}, nodes={len(self.nodes)}, edges={len(self.edges)})"

    @property
    def digraph(self) -> nx.DiGraph:
        return self._graph

    def node(self, node_id: str) -> OpNode:
        return self._by_id[node_id]

    def rank(self, node_id: str) -> int:
        """Topological generation: 0 for sources, 1 + max over predecessors otherwise."""
        return self._rank[node_id]

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def predecessors(self, node_id: str) -> list[str]:
        return sorted(self._graph.predecessors(node_id))

    def successors(self, node_id: str) -> list[str]:
        return sorted(self._graph.successors(node_id))

    def ancestors(self, node_id: str) -> set[str]:
        return nx.ancestors(self._graph, node_id)

    def total_work(self, kind: OpKind) -> float:
        return sum(node.work for node in self.nodes if node.kind == kind)

    def check_dependencies(self) -> None:
        """Decode attention must follow a KQV node and every O must follow attention."""
        for node in self.nodes:
            kinds = {self._by_id[a].kind for a in self.ancestors(node.id)}
            if node.kind == OpKind.DECODE_ATTN and OpKind.KQV not in kinds:
                raise PipelineError(f"{node.id} does not depend on a KQV node")
            if node.kind in (OpKind.O_COL, OpKind.O_ROW) and not kinds & {OpKind.DECODE_ATTN, OpKind.PREFILL_ATTN}:
                raise PipelineError(f"{node.id} does not depend on any attention node")


# ============================================================================
# Builders
# ============================================================================


def _prefix(layer: int, n_layers: int) -> str:
    return f"L{layer}." if n_layers > 1 else ""


def _finish(
    nodes: list[OpNode],
    edges: list[tuple[str, str]],
    split: NanoSplit,
    name: str,
    layer_multiplier: int,
) -> PipelineGraph:
    graph = PipelineGraph(nodes, edges, split, name=name, layer_multiplier=layer_multiplier)
    graph.check_dependencies()
    _LOGGER.debug("Built %r", graph)
    return graph


def build_overlapped_pipeline(
    b_dense: float,
    comp: BatchComposition,
    split: NanoSplit = DEFAULT_SPLIT,
    *,
    n_layers: int = 1,
    layer_multiplier: int = 1,
    prefill_ways: int = 1,
) -> PipelineGraph:
    """Overlapped layer with four KQV/attention and two O/UGD nano-batches."""
    if prefill_ways not in (1, 2):
        raise PipelineError(f"prefill_ways must be 1 or 2, got {prefill_ways}")
    kqv, attn, o, ugd = split.kqv_splits, split.attn_splits, split.o_splits, split.ugd_splits
    nodes: list[OpNode] = []
    edges: list[tuple[str, str]] = []
    for layer in range(n_layers):
        p = _prefix(layer, n_layers)

        def add(node_id: str, kind: OpKind, nano: int, work: float, *, _p: str = p, _layer: int = layer) -> str:
            nodes.append(OpNode(f"{_p}{node_id}", kind, nano, work, layer=_layer))
            return f"{_p}{node_id}"

        kqv_ids = [add(f"KQV{i + 1}", OpKind.KQV, i, b_dense * kqv[i]) for i in range(4)]
        attn_ids = [
            add(f"DecodeAttn{i // 2 + 1}-{i % 2 + 1}", OpKind.DECODE_ATTN, i, comp.e_kv_touched * attn[i])
            for i in range(4)
        ]
        edges += list(zip(kqv_ids, attn_ids, strict=True))

        if prefill_ways == 1:
            prefill = [add("PrefillAttn", OpKind.PREFILL_ATTN, 0, comp.n_prefill_tokens)]
        else:
            prefill = [
                add(f"PrefillAttn{j + 1}", OpKind.PREFILL_ATTN, j, comp.n_prefill_tokens * o[j]) for j in range(2)
            ]
        edges += [(kqv_ids[0], prefill[0]), (kqv_ids[1], prefill[0])]

        # nano-batch 0: gather attention output, column-parallel O, gather again for UGD
        gather_attn = add("AllGather1", OpKind.ALL_GATHER, 0, ACTIVATION_COPIES_PER_LAYER / 2 * b_dense * o[0])
        o_col = add("O1", OpKind.O_COL, 0, b_dense * o[0])
        gather_o = add("AllGather2", OpKind.ALL_GATHER, 0, ACTIVATION_COPIES_PER_LAYER / 2 * b_dense * o[0])
        ugd_0 = add("UGD1", OpKind.UGD, 0, b_dense * ugd[0])
        edges += [(attn_ids[0], gather_attn), (attn_ids[1], gather_attn), (prefill[0], gather_attn)]
        edges += [(gather_attn, o_col), (o_col, gather_o), (gather_o, ugd_0)]

        # nano-batch 1: row-parallel O reduces instead of gathering
        o_row = add("O2", OpKind.O_ROW, 1, b_dense * o[1])
        reduce_o = add("AllReduce", OpKind.ALL_REDUCE, 1, ACTIVATION_COPIES_PER_LAYER * b_dense * o[1])
        ugd_1 = add("UGD2", OpKind.UGD, 1, b_dense * ugd[1])
        edges += [(attn_ids[2], o_row), (attn_ids[3], o_row), (o_row, reduce_o), (reduce_o, ugd_1)]
        if prefill_ways == 2:
            edges += [(kqv_ids[2], prefill[1]), (kqv_ids[3], prefill[1]), (prefill[1], o_row)]

        if layer + 1 < n_layers:
            q = _prefix(layer + 1, n_layers)
            edges += [(ugd_0, f"{q}KQV1"), (ugd_0, f"{q}KQV2"), (ugd_1, f"{q}KQV3"), (ugd_1, f"{q}KQV4")]

    # forward references to the next layer are resolved once every node exists
    return _finish(nodes, edges, split, "overlapped", layer_multiplier)


SEQUENTIAL_CHAIN: tuple[tuple[str, OpKind], ...] = (
    ("KQV", OpKind.KQV),
    ("DecodeAttn", OpKind.DECODE_ATTN),
    ("PrefillAttn", OpKind.PREFILL_ATTN),
    ("AllGather1", OpKind.ALL_GATHER),
    ("O", OpKind.O_COL),
    ("AllGather2", OpKind.ALL_GATHER),
    ("UGD", OpKind.UGD),
    ("AllReduce", OpKind.ALL_REDUCE),
)


def build_sequential_pipeline(
    b_dense: float,
    comp: BatchComposition,
    *,
    n_layers: int = 1,
    layer_multiplier: int = 1,
) -> PipelineGraph:
    """One node per operation, each waiting for the previous (``SEQUENTIAL_CHAIN``)."""
    work = {
        "KQV": b_dense,
        "DecodeAttn": comp.e_kv_touched,
        "PrefillAttn": comp.n_prefill_tokens,
        "AllGather1": b_dense,
        "O": b_dense,
        "AllGather2": b_dense,
        "UGD": b_dense,
        "AllReduce": (ACTIVATION_COPIES_PER_LAYER - 2) * b_dense,
    }
    nodes: list[OpNode] = []
    for layer in range(n_layers):
        p = _prefix(layer, n_layers)
        nodes += [OpNode(f"{p}{name}", kind, 0, work[name], layer=layer) for name, kind in SEQUENTIAL_CHAIN]
    edges = [(a.id, b.id) for a, b in itertools.pairwise(nodes)]
    return _finish(nodes, edges, DEFAULT_SPLIT, "sequential", layer_multiplier)


def build_single_device_pipeline(
    b_dense: float,
    comp: BatchComposition,
    split: NanoSplit = DEFAULT_SPLIT,
    *,
    n_layers: int = 1,
    layer_multiplier: int = 1,
) -> PipelineGraph:
    """
    Two nano-batches without collectives: the FFN of the first overlaps the
    attention of the second. KQV and attention pairs of the 4-way groups are
    merged into one node per nano-batch.
    """
    kqv, attn = split.kqv_splits, split.attn_splits
    nodes: list[OpNode] = []
    edges: list[tuple[str, str]] = []
    for layer in range(n_layers):
        p = _prefix(layer, n_layers)
        for j in range(2):
            n = j + 1
            nodes += [
                OpNode(f"{p}KQV{n}", OpKind.KQV, j, b_dense * (kqv[2 * j] + kqv[2 * j + 1]), layer=layer),
                OpNode(
                    f"{p}DecodeAttn{n}",
                    OpKind.DECODE_ATTN,
                    j,
                    comp.e_kv_touched * (attn[2 * j] + attn[2 * j + 1]),
                    layer=layer,
                ),
                OpNode(f"{p}O{n}", OpKind.O_COL, j, b_dense * split.o_splits[j], layer=layer),
                OpNode(f"{p}UGD{n}", OpKind.UGD, j, b_dense * split.ugd_splits[j], layer=layer),
            ]
            edges += [
                (f"{p}KQV{n}", f"{p}DecodeAttn{n}"),
                (f"{p}DecodeAttn{n}", f"{p}O{n}"),
                (f"{p}O{n}", f"{p}UGD{n}"),
            ]
            if layer + 1 < n_layers:
                edges.append((f"{p}UGD{n}", f"{_prefix(layer + 1, n_layers)}KQV{n}"))
        nodes.append(OpNode(f"{p}PrefillAttn", OpKind.PREFILL_ATTN, 0, comp.n_prefill_tokens, layer=layer))
        edges += [(f"{p}KQV1", f"{p}PrefillAttn"), (f"{p}PrefillAttn", f"{p}O1")]
    return _finish(nodes, edges, split, "single-device", layer_multiplier)


def build_nanobatch_only_pipeline(
    b_dense: float,
    comp: BatchComposition,
    split: NanoSplit = DEFAULT_SPLIT,
    *,
    n_layers: int = 1,
    layer_multiplier: int = 1,
) -> PipelineGraph:
    """The overlapped node set executed one operation at a time: splitting without overlap."""
    overlapped = build_overlapped_pipeline(b_dense, comp, split, n_layers=n_layers)
    order = overlapped.topological_order()
    edges = list(overlapped.edges) + list(itertools.pairwise(order))
    return _finish(list(overlapped.nodes), edges, split, "nanobatch", layer_multiplier)


PIPELINE_BUILDERS = {
    "overlapped": build_overlapped_pipeline,
    "single-device": build_single_device_pipeline,
    "nanobatch": build_nanobatch_only_pipeline,
}


# ============================================================================
# Split enumeration
# ============================================================================


def _compositions(steps: int, ways: int) -> list[tuple[int, ...]]:
    """All ordered ways of writing ``steps`` as ``ways`` positive integers."""
    return [
        tuple(b - a for a, b in itertools.pairwise((0, *cuts, steps)))
        for cuts in itertools.combinations(range(1, steps), ways - 1)
    ]


def enumerate_splits(
    granularity: str | float | Fraction,
    *,
    vary: Sequence[str] = SPLIT_GROUPS,
    base: NanoSplit = DEFAULT_SPLIT,
    dedup_symmetric: bool = False,
) -> list[NanoSplit]:
    """
    Every split whose varied groups use positive multiples of ``granularity``;
    groups not in ``vary`` keep ``base``. With ``dedup_symmetric`` only
    non-increasing fraction tuples are kept. Sorted lexicographically.
    """
    step = parse_fraction(granularity)
    if step <= 0:
        raise PipelineError(f"granularity must be > 0, got {granularity}")
    if (1 / step).denominator != 1:
        raise PipelineError(f"granularity {step} does not divide 1")
    unknown = set(vary) - set(SPLIT_GROUPS)
    if unknown:
        raise PipelineError(f"unknown split groups: {', '.join(sorted(unknown))}")
    steps = int(1 / step)

    options: list[list[tuple[float, ...]]] = []
    for group in SPLIT_GROUPS:
        if group not in vary:
            options.append([getattr(base, f"{group}_splits")])
            continue
        parts = _compositions(steps, GROUP_WAYS[group])
        if dedup_symmetric:
            parts = [c for c in parts if list(c) == sorted(c, reverse=True)]
        options.append([tuple(float(Fraction(c) * step) for c in comp) for comp in parts])

    splits = [NanoSplit(*combo) for combo in itertools.product(*options)]
    splits.sort(key=lambda s: s.key)
    _LOGGER.debug("Enumerated %d splits at granularity %s over %s", len(splits), step, ",".join(vary))
    return splits


def export_graph(graph: PipelineGraph, path: str | Path) -> None:
    """Write the node and edge lists as YAML."""
    dump_yaml(
        Path(path),
        {
            "name": graph.name,
            "layer_multiplier": graph.layer_multiplier,
            "split": graph.split,
            "nodes": [
                {
                    "id": node.id,
                    "kind": node.kind,
                    "nano_index": node.nano_index,
                    "work": node.work,
                    "min_units": node.min_units,
                    "layer": node.layer,
                }
                for node in graph.nodes
            ],
            "edges": [list(edge) for edge in graph.edges],
        },
    )
