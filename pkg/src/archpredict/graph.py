"""Architecture DAGs and the son/father/grandfather adjacency masks."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np


class SchemaError(ValueError):
    """A document does not match the architecture schema."""


class VocabularyError(SchemaError):
    """An op name outside the registered vocabulary."""


class TopologyError(ValueError):
    """The graph contains a cycle."""

    def __init__(self, message: str, cycle_edges: list[tuple[int, int]]):
        super().__init__(message)
        self.cycle_edges = cycle_edges


PARAM_L = "ParamL"
PARAM_N = "ParamN"
CATEGORIES = (PARAM_L, PARAM_N)


@dataclass(frozen=True)
class OpSchema:
    category: str
    attrs: tuple[str, ...] = ()


# op name -> category and the meaning of each numeric attribute, in order
OP_REGISTRY: dict[str, OpSchema] = {
    "Conv": OpSchema(PARAM_L, ("kernel",)),
    "DWConv": OpSchema(PARAM_L, ("kernel",)),
    "FC": OpSchema(PARAM_L, ("in_features", "out_features")),
    "BN": OpSchema(PARAM_L),
    "ReLU": OpSchema(PARAM_N),
    "Sigmoid": OpSchema(PARAM_N),
    "Add": OpSchema(PARAM_N),
    "Concat": OpSchema(PARAM_N),
    "Pool": OpSchema(PARAM_N, ("kernel",)),
    "GlobalPool": OpSchema(PARAM_N),
}


@dataclass(frozen=True)
class NodeRecord:
    id: int
    category: str
    op: str
    attrs: tuple[int, ...] = ()

    def validate(self) -> None:
        schema = OP_REGISTRY.get(self.op)
        if schema is None:
            raise VocabularyError(f"unknown op {self.op!r}")
        if self.category != schema.category:
            raise SchemaError(
                f"op {self.op} has category {schema.category}, got {self.category!r}"
            )
        if len(self.attrs) != len(schema.attrs):
            raise SchemaError(
                f"op {self.op} takes {len(schema.attrs)} attrs {schema.attrs}, got {list(self.attrs)}"
            )
        if any(not isinstance(a, int) or isinstance(a, bool) or a <= 0 for a in self.attrs):
            raise SchemaError(f"attrs of {self.op} must be positive integers: {list(self.attrs)}")


def make_node(id: int, op: str, attrs: Iterable[int] = ()) -> NodeRecord:
    """Node with the registry's category for ``op``."""
    schema = OP_REGISTRY.get(op)
    if schema is None:
        raise VocabularyError(f"unknown op {op!r}")
    node = NodeRecord(id, schema.category, op, tuple(attrs))
    node.validate()
    return node


def validate_dag(n: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    """Kahn's algorithm with smallest-id-first tie breaking.

    Returns the topological order; raises :class:`TopologyError` carrying the
    edges of one cycle when the graph is not acyclic.
    """
    edges = list(edges)
    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for s, d in edges:
        succ[s].append(d)
        indeg[d] += 1
    heap = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) == n:
        return order
    cycle = _find_cycle(n, succ, {i for i in range(n) if indeg[i] > 0})
    raise TopologyError(f"graph has a cycle through edges {cycle}", cycle)


def _find_cycle(n: int, succ: list[list[int]], remaining: set[int]) -> list[tuple[int, int]]:
    # every node Kahn could not emit has a predecessor that is also stuck,
    # so walking predecessors must revisit a node
    pred: dict[int, list[int]] = {v: [] for v in remaining}
    for u in remaining:
        for v in succ[u]:
            if v in remaining:
                pred[v].append(u)
    seen: dict[int, int] = {}
    path: list[int] = []
    v = min(remaining)
    while v not in seen:
        seen[v] = len(path)
        path.append(v)
        v = min(pred[v])
    loop = list(reversed(path[seen[v]:] + [v]))
    return [(loop[i], loop[i + 1]) for i in range(len(loop) - 1)]


@dataclass(frozen=True)
class ArchGraph:
    """Validated DAG with nodes reindexed to topological positions 0..n-1."""

    nodes: tuple[NodeRecord, ...]
    edges: tuple[tuple[int, int], ...]
    topo_order: tuple[int, ...] = field(default=())
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int64)
        for s, d in self.edges:
            a[s, d] = 1
        return a

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "nodes": [
                {"id": nd.id, "op": nd.op, "category": nd.category, "attrs": list(nd.attrs)}
                for nd in self.nodes
            ],
            "edges": [list(e) for e in self.edges],
        }


def build_graph(
    nodes: Iterable[NodeRecord], edges: Iterable[tuple[int, int]], name: str = ""
) -> ArchGraph:
    """Validate and canonicalize: ids must be 0..n-1, the graph acyclic."""
    nodes = list(nodes)
    n = len(nodes)
    if n == 0:
        raise SchemaError("graph has no nodes")
    by_id: dict[int, NodeRecord] = {}
    for nd in nodes:
        nd.validate()
        if nd.id in by_id:
            raise SchemaError(f"duplicate node id {nd.id}")
        by_id[nd.id] = nd
    if sorted(by_id) != list(range(n)):
        raise SchemaError(f"node ids must be 0..{n - 1}, got {sorted(by_id)}")
    seen: set[tuple[int, int]] = set()
    clean: list[tuple[int, int]] = []
    for e in edges:
        if len(e) != 2:
            raise SchemaError(f"edge must be a pair, got {e!r}")
        s, d = int(e[0]), int(e[1])
        if s not in by_id or d not in by_id:
            raise SchemaError(f"dangling edge {s}->{d}")
        if s == d:
            raise TopologyError(f"self-loop on node {s}", [(s, d)])
        if (s, d) in seen:
            raise SchemaError(f"duplicate edge {s}->{d}")
        seen.add((s, d))
        clean.append((s, d))
    order = validate_dag(n, clean)
    pos = {old: new for new, old in enumerate(order)}
    new_nodes = tuple(
        NodeRecord(pos[old], by_id[old].category, by_id[old].op, by_id[old].attrs) for old in order
    )
    new_edges = tuple(sorted((pos[s], pos[d]) for s, d in clean))
    return ArchGraph(new_nodes, new_edges, tuple(order), name)


def parse_architecture(document: str | dict) -> ArchGraph:
    """Parse one architecture object (JSON text or already-decoded dict)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise SchemaError("architecture document must be an object")
    try:
        raw_nodes = document["nodes"]
        raw_edges = document.get("edges", [])
    except KeyError as exc:
        raise SchemaError(f"missing field {exc}") from exc
    nodes = []
    for rn in raw_nodes:
        try:
            op = rn["op"]
            nid = rn["id"]
            cat = rn.get("category") or OP_REGISTRY.get(op, OpSchema(PARAM_N)).category
            attrs = tuple(rn.get("attrs", []))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad node entry {rn!r}") from exc
        if op not in OP_REGISTRY:
            raise VocabularyError(f"unknown op {op!r}")
        if cat not in CATEGORIES:
            raise SchemaError(f"unknown category {cat!r}")
        nodes.append(NodeRecord(int(nid), cat, op, attrs))
    return build_graph(nodes, [tuple(e) for e in raw_edges], str(document.get("name", "")))


@dataclass(frozen=True)
class AdjacencyMasks:
    a: np.ndarray
    son: np.ndarray
    father: np.ndarray
    grandfather: np.ndarray

    def stacked(self) -> np.ndarray:
        """Branch order used by the attention layer: grandfather, father, son."""
        return np.stack([self.grandfather, self.father, self.son])


def binarize(m: np.ndarray) -> np.ndarray:
    return (m > 0).astype(np.int64)


def derive_masks(g: ArchGraph) -> AdjacencyMasks:
    """Son = A, father = Bi(A^T), grandfather = Bi(A^T A^T)."""
    return masks_from_adjacency(g.adjacency())


def masks_from_adjacency(a: np.ndarray) -> AdjacencyMasks:
    a = binarize(np.asarray(a))
    at = a.T
    return AdjacencyMasks(
        a=a,
        son=a.copy(),
        father=binarize(at),
        grandfather=binarize(at @ at),
    )


def extend_masks(masks: np.ndarray) -> np.ndarray:
    """Append an all-ones row and column (the platform token) to each mask."""
    *lead, n, _ = masks.shape
    out = np.ones((*lead, n + 1, n + 1), dtype=masks.dtype)
    out[..., :n, :n] = masks
    return out
