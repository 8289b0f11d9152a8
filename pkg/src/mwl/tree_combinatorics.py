"""Planar trivalent directed trees with k incoming leaves and their edge labels.

A tree is stored through its bracketing: every vertex owns an interval
``(i, j)`` of leaf indices and its outgoing edge carries the label ``ij``.
Incoming leaf ``l`` (1-based, planar order) carries ``(l-1, l)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb


class InvalidTopology(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    """Directed edge. ``src``/``dst`` are vertex ids, or None for a free end."""

    id: int
    src: int | None
    dst: int | None
    label: tuple[int, int] | None
    kind: str  # "leaf", "internal" or "root"


@dataclass(frozen=True)
class Flag:
    edge: int
    vertex: int
    root: bool = False


@dataclass(frozen=True)
class TreeTopology:
    k: int
    vertices: tuple[int, ...]
    root: int | None
    edges: tuple[Edge, ...]
    leaf_order: tuple[int, ...]  # edge ids of incoming leaves, planar order
    bracket: tuple = field(default=(), compare=False)

    @property
    def internal_edges(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.kind == "internal")

    @property
    def leaf_edges(self) -> tuple[Edge, ...]:
        return tuple(self.edges[i] for i in self.leaf_order)

    @property
    def root_edge(self) -> Edge:
        return next(e for e in self.edges if e.kind == "root")

    @property
    def topology_id(self) -> str:
        return bracket_string(self.bracket)

    def incoming(self, v: int) -> tuple[Edge, Edge]:
        ins = [e for e in self.edges if e.dst == v]
        # planar order: the edge covering later leaves comes first (inputs read x_k ... x_1)
        ins.sort(key=lambda e: -e.label[0] if e.label else 0)
        return ins[0], ins[1]

    def outgoing(self, v: int) -> Edge:
        return next(e for e in self.edges if e.src == v)

    def postorder(self) -> list[int]:
        """Vertices with children before parents."""
        return list(self.vertices)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "topology_id": self.topology_id,
            "edges": [
                {"src": e.src, "dst": e.dst, "label": list(e.label) if e.label else None, "kind": e.kind}
                for e in self.edges
            ],
            "leaf_order": list(self.leaf_order),
        }


@dataclass(frozen=True)
class MetricTree:
    topology: TreeTopology
    lengths: dict[int, float]

    def __post_init__(self):
        ids = {e.id for e in self.topology.internal_edges}
        if set(self.lengths) != ids:
            raise InvalidTopology("lengths must be given for exactly the internal edges")
        if any(not (0.0 < l < float("inf")) for l in self.lengths.values()):
            raise InvalidTopology("edge lengths must be finite and positive")


def catalan(n: int) -> int:
    return comb(2 * n, n) // (n + 1)


@lru_cache(maxsize=None)
def _brackets(i: int, j: int) -> tuple:
    if j - i == 1:
        return ((i, j),)
    out = []
    for m in range(i + 1, j):
        for left in _brackets(i, m):
            for right in _brackets(m, j):
                out.append((left, right))
    return tuple(out)


def bracket_string(b) -> str:
    if isinstance(b[0], int):
        return f"{b[0]}{b[1]}"
    return "(" + bracket_string(b[0]) + "," + bracket_string(b[1]) + ")"


def _from_bracket(k: int, bracket, labeled: bool = True) -> TreeTopology:
    edges: list[Edge] = []
    vertices: list[int] = []
    leaf_ids: dict[int, int] = {}
    pending: list[tuple[int, int | None, tuple[int, int]]] = []  # (edge id, src, label)

    def walk(b) -> tuple[int, tuple[int, int]]:
        # returns (src vertex of the edge leaving this subtree, label)
        if isinstance(b[0], int):
            eid = len(edges) + len(pending)
            pending.append((eid, None, b))
            leaf_ids[b[1]] = eid
            return eid, b
        e_left = walk(b[0])
        e_right = walk(b[1])
        v = len(vertices)
        vertices.append(v)
        for eid, _lab in (e_left, e_right):
            for idx, (pid, src, plab) in enumerate(pending):
                if pid == eid:
                    kind = "leaf" if src is None else "internal"
                    edges.append(Edge(pid, src, v, plab if labeled or kind == "leaf" else None, kind))
                    pending.pop(idx)
                    break
        lab = _span(b)
        eid = len(edges) + len(pending)
        pending.append((eid, v, lab))
        return eid, lab

    if k == 1:
        edges = [Edge(0, None, None, (0, 1), "root")]
        return TreeTopology(1, (), None, tuple(edges), (0,), bracket=(0, 1))
    walk(bracket)
    (eid, src, lab), = pending
    edges.append(Edge(eid, src, None, lab if labeled else None, "root"))
    edges.sort(key=lambda e: e.id)
    leaf_order = tuple(leaf_ids[l] for l in range(1, k + 1))
    return TreeTopology(k, tuple(vertices), vertices[-1], tuple(edges), leaf_order, bracket=bracket)


def _span(b) -> tuple[int, int]:
    if isinstance(b[0], int):
        return b
    return (_span(b[0])[0], _span(b[1])[1])


def enumerate_topologies(k: int) -> list[TreeTopology]:
    """All labeled trivalent planar k-trees, Catalan(k-1) of them.

    Canonical order is lexicographic in the split points of the bracketing,
    read from the root downward.
    """
    if not isinstance(k, int) or k < 1:
        raise ValueError("k must be an integer >= 1")
    if k == 1:
        return [_from_bracket(1, (0, 1))]
    return [_from_bracket(k, b) for b in _brackets(0, k)]


def unlabeled(t: TreeTopology) -> TreeTopology:
    """Copy of ``t`` with only the incoming leaf labels kept."""
    leaves = set(t.leaf_order)
    edges = tuple(Edge(e.id, e.src, e.dst, e.label if e.id in leaves else None, e.kind) for e in t.edges)
    return TreeTopology(t.k, t.vertices, t.root, edges, t.leaf_order, bracket=t.bracket)


def label_edges(t: TreeTopology) -> TreeTopology:
    """Propagate labels from the leaves: incoming ij and jl give outgoing il."""
    labels: dict[int, tuple[int, int]] = {}
    for pos, eid in enumerate(t.leaf_order):
        lab = t.edges[eid].label
        if lab != (pos, pos + 1):
            raise InvalidTopology(f"leaf {pos + 1} carries {lab}, expected {(pos, pos + 1)}")
        labels[eid] = lab
    if t.k == 1:
        return t
    for v in t.vertices:
        ins = [e for e in t.edges if e.dst == v]
        if len(ins) != 2 or any(e.id not in labels for e in ins):
            raise InvalidTopology(f"vertex {v} is not trivalent or not reachable from leaves")
        (a, b), (c, d) = sorted(labels[e.id] for e in ins)
        if b != c:
            raise InvalidTopology(f"labels {a}{b} and {c}{d} do not share a middle index at vertex {v}")
        out = [e for e in t.edges if e.src == v]
        if len(out) != 1:
            raise InvalidTopology(f"vertex {v} must have exactly one outgoing edge")
        labels[out[0].id] = (a, d)
    edges = tuple(Edge(e.id, e.src, e.dst, labels[e.id], e.kind) for e in t.edges)
    root_label = labels[t.root_edge.id]
    if root_label != (0, t.k):
        raise InvalidTopology(f"outgoing label {root_label} != (0,{t.k})")
    return TreeTopology(t.k, t.vertices, t.root, edges, t.leaf_order, bracket=t.bracket)


def flags(t: TreeTopology) -> list[Flag]:
    out = []
    for e in t.edges:
        for v in (e.src, e.dst):
            if v is not None:
                out.append(Flag(e.id, v, root=(v == t.root)))
    return out
