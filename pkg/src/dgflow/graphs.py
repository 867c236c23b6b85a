"""Labeled graphs, BFS canonical ordering, and token-sequence conversion.

A graph is generated / consumed as a flat decision sequence: one node token
per node, then for node i (i >= 2) one edge token per earlier node j < i,
where the edge category ``c`` (== no_edge_index) means "no edge".
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

__all__ = [
    "Alphabet",
    "GraphError",
    "LabeledGraph",
    "NodeToken",
    "EdgeToken",
    "bfs_order",
    "to_sequence",
    "from_sequence",
    "is_connected",
]


class GraphError(ValueError):
    """Raised for malformed graphs or sequences."""


@dataclass(frozen=True)
class Alphabet:
    """Category sets for node and edge labels.

    node_symbols: k node-type labels, index = type id.
    edge_symbols: c real edge-type labels; category c itself means "no edge".
    max_valence:  per node type, the largest total bond order the type
                  supports (edge type v contributes v + 1).
    """

    node_symbols: tuple[str, ...]
    edge_symbols: tuple[str, ...]
    max_valence: tuple[int, ...]

    def __post_init__(self):
        if len(self.node_symbols) < 1 or len(self.edge_symbols) < 1:
            raise GraphError("alphabet needs at least one node and edge symbol")
        if len(set(self.node_symbols)) != len(self.node_symbols):
            raise GraphError("duplicate node symbols")
        if len(set(self.edge_symbols)) != len(self.edge_symbols):
            raise GraphError("duplicate edge symbols")
        if len(self.max_valence) != len(self.node_symbols):
            raise GraphError("max_valence must have one entry per node symbol")
        if any(v < 1 for v in self.max_valence):
            raise GraphError("max_valence entries must be >= 1")

    @property
    def num_node_types(self) -> int:
        return len(self.node_symbols)

    @property
    def num_edge_types(self) -> int:
        return len(self.edge_symbols)

    @property
    def no_edge_index(self) -> int:
        return len(self.edge_symbols)


def generic_alphabet(num_node_types: int = 1, num_edge_types: int = 1) -> Alphabet:
    """Alphabet for generic (non-molecular) graphs: valence effectively unbounded."""
    return Alphabet(
        node_symbols=tuple(f"n{i}" for i in range(num_node_types)),
        edge_symbols=tuple(f"e{i}" for i in range(num_edge_types)),
        max_valence=tuple(10**9 for _ in range(num_node_types)),
    )


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected simple graph with typed nodes and typed edges.

    edges hold (i, j, edge_type) with i < j; at most one edge per pair,
    no self-loops. Immutable; all operations return new graphs.
    """

    node_types: tuple[int, ...]
    edges: frozenset[tuple[int, int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        n = len(self.node_types)
        seen: set[tuple[int, int]] = set()
        for (i, j, t) in self.edges:
            if not (0 <= i < j < n):
                raise GraphError(f"bad edge endpoints ({i},{j}) for n={n}")
            if t < 0:
                raise GraphError(f"negative edge type on ({i},{j})")
            if (i, j) in seen:
                raise GraphError(f"duplicate edge ({i},{j})")
            seen.add((i, j))

    @staticmethod
    def build(node_types: Iterable[int], edges: Iterable[tuple[int, int, int]] = ()) -> "LabeledGraph":
        norm = frozenset((min(i, j), max(i, j), t) for (i, j, t) in edges)
        return LabeledGraph(tuple(node_types), norm)

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    def edge_dict(self) -> dict[tuple[int, int], int]:
        return {(i, j): t for (i, j, t) in self.edges}

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.node_types]
        for (i, j, _t) in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degree(self, i: int) -> int:
        return sum(1 for (a, b, _t) in self.edges if a == i or b == i)

    def relabel(self, order: Sequence[int]) -> "LabeledGraph":
        """Return the graph with node order[p] renamed to p."""
        n = self.num_nodes
        if sorted(order) != list(range(n)):
            raise GraphError("order is not a permutation")
        pos = [0] * n
        for p, old in enumerate(order):
            pos[old] = p
        types = tuple(self.node_types[old] for old in order)
        edges = frozenset(
            (min(pos[i], pos[j]), max(pos[i], pos[j]), t) for (i, j, t) in self.edges
        )
        return LabeledGraph(types, edges)

    def with_node(self, node_type: int) -> "LabeledGraph":
        return LabeledGraph(self.node_types + (node_type,), self.edges)

    def with_edge(self, i: int, j: int, edge_type: int) -> "LabeledGraph":
        if i == j:
            raise GraphError("self-loop")
        e = (min(i, j), max(i, j), edge_type)
        if any(a == e[0] and b == e[1] for (a, b, _t) in self.edges):
            raise GraphError(f"edge ({i},{j}) already present")
        return LabeledGraph(self.node_types, self.edges | {e})


@dataclass(frozen=True)
class NodeToken:
    node_type: int


@dataclass(frozen=True)
class EdgeToken:
    """Edge decision between node i and earlier node j (0-based, j < i)."""

    i: int
    j: int
    edge_type: int  # num_edge_types means "no edge"


Token = NodeToken | EdgeToken


def is_connected(g: LabeledGraph) -> bool:
    """True iff g has at most one connected component (empty graph counts)."""
    n = g.num_nodes
    if n == 0:
        return True
    return len(_reachable_from_zero(g)) == n


def _reachable_from_zero(g: LabeledGraph) -> set[int]:
    adj = g.neighbors()
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv_hash(*values: int) -> int:
    """Deterministic 64-bit FNV-1a over integer tuples (process-independent,
    unlike builtin hash)."""
    h = _FNV_OFFSET
    for v in values:
        for shift in range(0, 64, 8):
            h ^= (v >> shift) & 0xFF
            h = (h * _FNV_PRIME) & _MASK64
    return h


def refined_labels(g: LabeledGraph) -> list[int]:
    """Iterative neighborhood refinement labels: start from (type, degree,
    weighted degree), fold in sorted (edge type, neighbor label) pairs until
    the partition stabilizes (at most n rounds)."""
    n = g.num_nodes
    edict = g.edge_dict()
    adj = g.neighbors()
    wdeg = [0] * n
    for (i, j, t) in g.edges:
        wdeg[i] += t + 1
        wdeg[j] += t + 1
    labels = [fnv_hash(g.node_types[v], len(adj[v]), wdeg[v]) for v in range(n)]

    def partition(ls):
        groups: dict[int, list[int]] = {}
        for v, lb in enumerate(ls):
            groups.setdefault(lb, []).append(v)
        return sorted(tuple(v) for v in groups.values())

    for _ in range(max(1, n)):
        nxt = []
        for v in range(n):
            nb = sorted((edict[(min(v, u), max(v, u))], labels[u]) for u in adj[v])
            nxt.append(fnv_hash(labels[v], *[x for pair in nb for x in pair]))
        if partition(nxt) == partition(labels):
            break
        labels = nxt
    return labels


def canonical_order(g: LabeledGraph) -> list[int]:
    """Isomorphism-invariant node order: refinement labels, then a greedy DFS
    from each minimal-label root keeping the lexicographically smallest visit
    signature. Nodes that stay refinement-tied fall back to index order
    (deterministic; can miss automorphism-free ties on pathological regular
    graphs, which is acceptable for identity bookkeeping at this scale)."""
    n = g.num_nodes
    if n == 0:
        return []
    labels = refined_labels(g)
    edict = g.edge_dict()
    adj = g.neighbors()

    def dfs_from(root: int) -> tuple[list[int], list[int]]:
        order = [root]
        pos = {root: 0}
        sig = [labels[root]]
        stack = [root]
        while stack:
            u = stack[-1]
            cands = [w for w in adj[u] if w not in pos]
            if not cands:
                stack.pop()
                continue
            cands.sort(key=lambda w: (edict[(min(u, w), max(u, w))], labels[w], w))
            w = cands[0]
            pos[w] = len(order)
            order.append(w)
            sig.append(fnv_hash(edict[(min(u, w), max(u, w))], labels[w], pos[u]))
            stack.append(w)
        for v in range(n):  # disconnected leftovers, deterministic
            if v not in pos:
                pos[v] = len(order)
                order.append(v)
                sig.append(labels[v])
        return order, sig

    best_order: list[int] | None = None
    best_sig: list[int] | None = None
    min_label = min(labels)
    for root in [v for v in range(n) if labels[v] == min_label]:
        order, sig = dfs_from(root)
        if best_sig is None or sig < best_sig:
            best_sig, best_order = sig, order
    assert best_order is not None
    return best_order


def bfs_order(g: LabeledGraph) -> list[int]:
    """Deterministic BFS visit order: root is node 0, ties by ascending index.

    Raises GraphError naming the unreachable nodes if g is disconnected.
    """
    n = g.num_nodes
    if n == 0:
        raise GraphError("bfs_order of empty graph")
    adj = [sorted(nb) for nb in g.neighbors()]
    order = [0]
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                order.append(v)
                queue.append(v)
    if len(order) != n:
        missing = sorted(set(range(n)) - seen)
        raise GraphError(f"graph is disconnected; unreachable nodes {missing}")
    return order


def to_sequence(g: LabeledGraph, no_edge_index: int, order: Sequence[int] | None = None) -> list[Token]:
    """Flatten g into tokens (a_1, a_2, b_21, a_3, b_31, b_32, ...).

    order maps sequence position -> original node index; defaults to identity.
    Every pair (i, j<i) emits an edge token; absent pairs emit the alphabet's
    no-edge category.
    """
    n = g.num_nodes
    if order is None:
        order = list(range(n))
    relabeled = g.relabel(order)
    edict = relabeled.edge_dict()
    tokens: list[Token] = []
    for i in range(n):
        tokens.append(NodeToken(relabeled.node_types[i]))
        for j in range(i):
            tokens.append(EdgeToken(i, j, edict.get((j, i), no_edge_index)))
    return tokens


def from_sequence(tokens: Sequence[Token], no_edge_index: int) -> LabeledGraph:
    """Inverse of to_sequence under the identity order."""
    types: list[int] = []
    edges: list[tuple[int, int, int]] = []
    expect_node = True
    edges_due = 0
    i = -1
    for pos, tok in enumerate(tokens):
        if isinstance(tok, NodeToken):
            if not expect_node:
                raise GraphError(f"unexpected node token at position {pos}")
            types.append(tok.node_type)
            i += 1
            edges_due = i
            expect_node = edges_due == 0
        elif isinstance(tok, EdgeToken):
            if expect_node or edges_due == 0:
                raise GraphError(f"unexpected edge token at position {pos}")
            j = i - edges_due
            if tok.i != i or tok.j != j:
                raise GraphError(f"edge token at position {pos} has indices ({tok.i},{tok.j}), expected ({i},{j})")
            if tok.edge_type != no_edge_index:
                edges.append((j, i, tok.edge_type))
            edges_due -= 1
            expect_node = edges_due == 0
        else:
            raise GraphError(f"unknown token at position {pos}")
    if not expect_node:
        raise GraphError(f"sequence truncated: {edges_due} edge tokens missing")
    return LabeledGraph.build(types, edges)
