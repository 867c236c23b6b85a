"""Chemistry layer: valency rules, a kekulized-SMILES subset, canonical
strings, Morgan-style fingerprints, and property scorers.

Supported chemistry is deliberately narrow: uncharged kekulized organic
molecules over B,C,N,O,F,P,S,Cl,Br,I with single/double/triple bonds.
Anything richer (aromatic perception, stereo, charges) belongs to the
external oracle process.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
from dataclasses import dataclass

from .graphs import Alphabet, GraphError, LabeledGraph, canonical_order, fnv_hash

__all__ = [
    "MoleculeAlphabet",
    "QM9_ALPHABET",
    "ZINC_ALPHABET",
    "SmilesError",
    "check_valency",
    "check_edge_addition",
    "parse_smiles",
    "write_smiles",
    "canonical_form",
    "morgan_fingerprint",
    "tanimoto",
    "score",
    "ExternalScorer",
    "ScorerError",
]

BOND_ORDERS = ("single", "double", "triple")

# Standard uncharged organic valences.
_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "F": 1, "P": 5, "S": 6, "Cl": 1, "Br": 1, "I": 1}


@dataclass(frozen=True)
class MoleculeAlphabet(Alphabet):
    """Alphabet whose node symbols are atom symbols and whose edge types are
    bond orders (edge type v has bond order v + 1)."""

    @staticmethod
    def from_symbols(symbols: tuple[str, ...]) -> "MoleculeAlphabet":
        return MoleculeAlphabet(
            node_symbols=symbols,
            edge_symbols=BOND_ORDERS,
            max_valence=tuple(_VALENCE[s] for s in symbols),
        )

    def atom_index(self, symbol: str) -> int:
        return self.node_symbols.index(symbol)


QM9_ALPHABET = MoleculeAlphabet.from_symbols(("C", "N", "O", "F"))
ZINC_ALPHABET = MoleculeAlphabet.from_symbols(("C", "N", "O", "F", "P", "S", "Cl", "Br", "I"))


def valence_sums(g: LabeledGraph) -> list[int]:
    """Total bond order incident to each node (edge type v counts v + 1)."""
    sums = [0] * g.num_nodes
    for (i, j, t) in g.edges:
        sums[i] += t + 1
        sums[j] += t + 1
    return sums


def check_valency(g: LabeledGraph, alphabet: Alphabet) -> bool:
    """True iff every node's total bond order fits its type's capacity."""
    caps = alphabet.max_valence
    return all(s <= caps[g.node_types[i]] for i, s in enumerate(valence_sums(g)))


def check_edge_addition(g: LabeledGraph, alphabet: Alphabet, i: int, j: int, edge_type: int) -> bool:
    """Would adding (i, j, edge_type) keep the molecule valency-legal?

    edge_type == alphabet.no_edge_index is always legal. Raises if (i, j)
    already carries an edge.
    """
    n = g.num_nodes
    if not (0 <= i < n and 0 <= j < n and i != j):
        raise GraphError(f"bad endpoints ({i},{j})")
    lo, hi = min(i, j), max(i, j)
    if any(a == lo and b == hi for (a, b, _t) in g.edges):
        raise GraphError(f"edge ({i},{j}) already present")
    if edge_type == alphabet.no_edge_index:
        return True
    order = edge_type + 1
    caps = alphabet.max_valence
    sums = valence_sums(g)
    return (sums[i] + order <= caps[g.node_types[i]]
            and sums[j] + order <= caps[g.node_types[j]])


# ---------------------------------------------------------------------------
# SMILES subset
# ---------------------------------------------------------------------------

class SmilesError(ValueError):
    """Raised with a byte offset for unsupported or malformed SMILES."""


_TWO_CHAR = ("Cl", "Br")
_ONE_CHAR = ("B", "C", "N", "O", "F", "P", "S", "I")
_BOND_CHARS = {"-": 0, "=": 1, "#": 2}


def parse_smiles(text: str, alphabet: MoleculeAlphabet | None = None) -> LabeledGraph:
    """Parse the kekulized subset: atoms B,C,N,O,F,P,S,Cl,Br,I (bare or
    bracketed), bonds - = #, branches, ring closures 0-9 and %nn.

    No charges, isotopes, stereo marks, or aromatic lowercase.
    """
    if alphabet is None:
        alphabet = ZINC_ALPHABET
    types: list[int] = []
    edges: list[tuple[int, int, int]] = []
    stack: list[int] = []
    prev = -1
    pending_bond: int | None = None
    rings: dict[int, tuple[int, int | None, int]] = {}  # number -> (atom, bond, offset)

    def add_atom(symbol: str, pos: int) -> None:
        nonlocal prev, pending_bond
        try:
            t = alphabet.atom_index(symbol)
        except ValueError:
            raise SmilesError(f"atom '{symbol}' not in alphabet at offset {pos}") from None
        types.append(t)
        idx = len(types) - 1
        if prev >= 0:
            edges.append((prev, idx, pending_bond if pending_bond is not None else 0))
        prev = idx
        pending_bond = None

    def close_ring(num: int, pos: int) -> None:
        nonlocal pending_bond
        if prev < 0:
            raise SmilesError(f"ring closure before any atom at offset {pos}")
        if num in rings:
            other, bond0, pos0 = rings.pop(num)
            bond = pending_bond if pending_bond is not None else bond0
            if bond0 is not None and pending_bond is not None and bond0 != pending_bond:
                raise SmilesError(f"conflicting ring bond orders for closure {num} at offset {pos}")
            if bond is None:
                bond = 0
            if other == prev:
                raise SmilesError(f"ring closure {num} is a self-loop at offset {pos}")
            edges.append((other, prev, bond))
        else:
            rings[num] = (prev, pending_bond, pos)
        pending_bond = None

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in _BOND_CHARS:
            if pending_bond is not None:
                raise SmilesError(f"doubled bond symbol at offset {i}")
            pending_bond = _BOND_CHARS[ch]
            i += 1
        elif text[i:i + 2] in _TWO_CHAR:
            add_atom(text[i:i + 2], i)
            i += 2
        elif ch in _ONE_CHAR:
            add_atom(ch, i)
            i += 1
        elif ch == "[":
            end = text.find("]", i + 1)
            if end < 0:
                raise SmilesError(f"unclosed bracket at offset {i}")
            inner = text[i + 1:end]
            if inner in _TWO_CHAR or inner in _ONE_CHAR:
                add_atom(inner, i)
            else:
                raise SmilesError(f"unsupported bracket atom '[{inner}]' at offset {i}")
            i = end + 1
        elif ch == "(":
            if prev < 0:
                raise SmilesError(f"branch before any atom at offset {i}")
            stack.append(prev)
            i += 1
        elif ch == ")":
            if not stack:
                raise SmilesError(f"unmatched ')' at offset {i}")
            prev = stack.pop()
            i += 1
        elif ch.isdigit():
            close_ring(int(ch), i)
            i += 1
        elif ch == "%":
            if i + 2 >= n or not text[i + 1:i + 3].isdigit():
                raise SmilesError(f"bad %nn ring closure at offset {i}")
            close_ring(int(text[i + 1:i + 3]), i)
            i += 3
        else:
            raise SmilesError(f"unsupported token '{ch}' at offset {i}")
    if stack:
        raise SmilesError(f"unclosed branch (depth {len(stack)}) at end of input")
    if rings:
        num, (_a, _b, pos0) = next(iter(rings.items()))
        raise SmilesError(f"unclosed ring {num} opened at offset {pos0}")
    if pending_bond is not None:
        raise SmilesError("dangling bond symbol at end of input")
    dedup: dict[tuple[int, int], int] = {}
    for (a, b, t) in edges:
        key = (min(a, b), max(a, b))
        if key in dedup:
            raise SmilesError(f"duplicate bond between atoms {key[0]} and {key[1]}")
        dedup[key] = t
    return LabeledGraph.build(types, [(a, b, t) for (a, b), t in dedup.items()])


def write_smiles(g: LabeledGraph, alphabet: MoleculeAlphabet, order: list[int] | None = None) -> str:
    """Write the molecule in the supported subset; deterministic for a fixed
    node order (default: storage order, DFS from node order[0])."""
    n = g.num_nodes
    if n == 0:
        return ""
    if order is None:
        order = list(range(n))
    rank = {v: p for p, v in enumerate(order)}
    edict = g.edge_dict()
    adj: dict[int, list[int]] = {v: [] for v in range(n)}
    for (a, b, _t) in g.edges:
        adj[a].append(b)
        adj[b].append(a)
    for v in adj:
        adj[v].sort(key=lambda u: rank[u])

    root = order[0]
    visited: set[int] = {root}
    tree: dict[int, list[int]] = {v: [] for v in range(n)}
    visit_seq = [root]

    def build_tree(u: int) -> None:
        for w in adj[u]:
            if w not in visited:
                visited.add(w)
                visit_seq.append(w)
                tree[u].append(w)
                build_tree(w)

    build_tree(root)
    if len(visited) != n:
        raise GraphError("write_smiles requires a connected molecule")
    tree_pairs = {(min(u, w), max(u, w)) for u in tree for w in tree[u]}
    visit_rank = {v: p for p, v in enumerate(visit_seq)}
    backs = sorted(
        ((a, b) for (a, b, _t) in g.edges if (a, b) not in tree_pairs),
        key=lambda e: (min(visit_rank[e[0]], visit_rank[e[1]]), max(visit_rank[e[0]], visit_rank[e[1]])),
    )

    ring_open: dict[int, list[int]] = {v: [] for v in range(n)}  # atom -> ring numbers
    ring_bond: dict[int, int] = {}
    free_numbers = list(range(1, 100))
    for (u, w) in backs:
        num = free_numbers.pop(0)
        ring_open[u].append(num)
        ring_open[w].append(num)
        ring_bond[num] = edict[(min(u, w), max(u, w))]

    bond_str = {0: "", 1: "=", 2: "#"}

    def emit(u: int, bond_in: int | None) -> str:
        parts = []
        if bond_in is not None:
            parts.append(bond_str[bond_in])
        parts.append(alphabet.node_symbols[g.node_types[u]])
        for num in ring_open[u]:
            b = ring_bond[num]
            digits = str(num) if num < 10 else f"%{num:02d}"
            parts.append(bond_str[b] + digits if b else digits)
        kids = tree[u]
        for idx, w in enumerate(kids):
            b = edict[(min(u, w), max(u, w))]
            sub = emit(w, b)
            if idx < len(kids) - 1:
                parts.append(f"({sub})")
            else:
                parts.append(sub)
        return "".join(parts)

    root = order[0]
    return emit(root, None)


# ---------------------------------------------------------------------------
# Canonical form and fingerprints
# ---------------------------------------------------------------------------

def canonical_form(g: LabeledGraph, alphabet: MoleculeAlphabet | None = None) -> str:
    """Isomorphism-invariant identity string for uniqueness/novelty counting."""
    if alphabet is None:
        alphabet = ZINC_ALPHABET
    if g.num_nodes == 0:
        return ""
    return write_smiles(g, alphabet, canonical_order(g))


def morgan_fingerprint(g: LabeledGraph, radius: int = 2, bits: int = 2048) -> frozenset[int]:
    """ECFP-style fingerprint: initial per-node hash of (type, degree,
    valence sum), then `radius` rounds of neighbor-hash folding; every
    round's hashes set bits modulo the width."""
    n = g.num_nodes
    edict = g.edge_dict()
    adj = g.neighbors()
    vs = valence_sums(g)
    hashes = [fnv_hash(g.node_types[v], len(adj[v]), vs[v]) for v in range(n)]
    on = {h % bits for h in hashes}
    for _ in range(radius):
        nxt = []
        for v in range(n):
            nb = sorted((edict[(min(v, u), max(v, u))], hashes[u]) for u in adj[v])
            nxt.append(fnv_hash(hashes[v], *[x for pair in nb for x in pair]))
        hashes = nxt
        on.update(h % bits for h in hashes)
    return frozenset(on)


def tanimoto(f1: frozenset[int], f2: frozenset[int]) -> float:
    """|intersection| / |union| of fingerprint bit sets; empty vs empty is 1."""
    union = len(f1 | f2)
    if union == 0:
        return 1.0
    return len(f1 & f2) / union


# ---------------------------------------------------------------------------
# Property scorers
# ---------------------------------------------------------------------------

class ScorerError(RuntimeError):
    """External scorer protocol violation or failure; carries the raw reply."""


def _longest_carbon_chain(g: LabeledGraph, alphabet: MoleculeAlphabet) -> int:
    try:
        carbon = alphabet.atom_index("C")
    except ValueError:
        return 0
    nodes = [v for v in range(g.num_nodes) if g.node_types[v] == carbon]
    if not nodes:
        return 0
    nodeset = set(nodes)
    adj = {v: [u for u in nb if u in nodeset] for v, nb in enumerate(g.neighbors()) if v in nodeset}
    best = 1

    def extend(u: int, seen: set[int], length: int) -> None:
        nonlocal best
        best = max(best, length)
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                extend(w, seen, length + 1)
                seen.remove(w)

    for v in nodes:
        extend(v, {v}, 1)
    return best


def _ring_count(g: LabeledGraph) -> int:
    # cyclomatic number: |E| - |V| + #components
    n = g.num_nodes
    if n == 0:
        return 0
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    comps = n
    for (i, j, _t) in g.edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            comps -= 1
    return len(g.edges) - n + comps


def score(g: LabeledGraph, scorer, alphabet: MoleculeAlphabet | None = None) -> float:
    """Evaluate a property scorer on a molecule.

    scorer: "atoms" (node count), "plogp-proxy" (longest carbon chain minus
    ring count) or an ExternalScorer handle.
    """
    if alphabet is None:
        alphabet = ZINC_ALPHABET
    if scorer == "atoms":
        return float(g.num_nodes)
    if scorer == "plogp-proxy":
        return float(_longest_carbon_chain(g, alphabet) - _ring_count(g))
    if isinstance(scorer, ExternalScorer):
        return scorer.score(write_smiles(g, alphabet))
    raise ValueError(f"unknown scorer {scorer!r}")


class ExternalScorer:
    """Child-process scorer speaking a line protocol on stdin/stdout.

    Requests are single lines ("SCORE <smiles>", "SS <smiles>",
    "FILTER <smiles>", custom verbs); replies are a decimal float or
    "ERR <message>". One request in flight per handle.
    """

    def __init__(self, command: str, timeout: float = 10.0):
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._timeout = timeout
        self._lock = threading.Lock()

    def request(self, verb: str, payload: str) -> str:
        with self._lock:
            if self._proc.poll() is not None:
                raise ScorerError("scorer process has exited")
            assert self._proc.stdin and self._proc.stdout
            self._proc.stdin.write(f"{verb} {payload}\n")
            self._proc.stdin.flush()
            reply: list[str] = []

            def read():
                reply.append(self._proc.stdout.readline())

            t = threading.Thread(target=read, daemon=True)
            t.start()
            t.join(self._timeout)
            if t.is_alive():
                self._proc.kill()
                raise ScorerError(f"scorer timeout after {self._timeout}s on {verb!r}")
            raw = reply[0].strip() if reply else ""
            if not raw:
                raise ScorerError("scorer closed its output stream")
            return raw

    def score(self, smiles: str, verb: str = "SCORE") -> float:
        raw = self.request(verb, smiles)
        if raw.startswith("ERR"):
            raise ScorerError(f"scorer error reply: {raw!r}")
        try:
            return float(raw)
        except ValueError:
            raise ScorerError(f"unparsable scorer reply: {raw!r}") from None

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                assert self._proc.stdin
                self._proc.stdin.write("QUIT\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError):
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
