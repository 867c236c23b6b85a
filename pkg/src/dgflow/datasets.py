"""Dataset ingestion and synthesis: SMILES files, edge-list files, the
two-community synthetic set, and a seeded molecule generator for desk-scale
training corpora."""

from __future__ import annotations

import numpy as np

from .chem import MoleculeAlphabet, SmilesError, parse_smiles, write_smiles
from .graphs import Alphabet, GraphError, LabeledGraph, generic_alphabet, is_connected

__all__ = [
    "load_smiles",
    "save_smiles",
    "load_edge_lists",
    "save_edge_lists",
    "gen_community_small",
    "random_molecules",
]


def load_smiles(path: str, alphabet: MoleculeAlphabet) -> tuple[list[LabeledGraph], int]:
    """One SMILES per line (a leading literal "smiles" header is skipped).

    Molecules outside the supported subset or alphabet are skipped and
    counted, not fatal: desk-scale corpora may carry a tail of unsupported
    entries.
    """
    graphs: list[LabeledGraph] = []
    skipped = 0
    with open(path) as fh:
        for ln, line in enumerate(fh):
            text = line.strip()
            if not text or (ln == 0 and text.lower() == "smiles"):
                continue
            try:
                g = parse_smiles(text, alphabet)
                if not is_connected(g):
                    raise SmilesError("disconnected molecule")
                graphs.append(g)
            except (SmilesError, GraphError):
                skipped += 1
    return graphs, skipped


def save_smiles(path: str, graphs: list[LabeledGraph], alphabet: MoleculeAlphabet) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(write_smiles(g, alphabet) + "\n")


def load_edge_lists(path: str) -> tuple[list[LabeledGraph], Alphabet]:
    """Blocks separated by blank lines; per block: "n k c", then n lines
    "i type", then one line "i j type" per edge. All graphs in one file share
    (k, c); the returned alphabet is generic with those sizes."""
    graphs = []
    k = c = None
    with open(path) as fh:
        blocks = [b for b in fh.read().split("\n\n") if b.strip()]
    for block in blocks:
        lines = [ln for ln in block.splitlines() if ln.strip()]
        n, bk, bc = (int(x) for x in lines[0].split())
        if k is None:
            k, c = bk, bc
        elif (bk, bc) != (k, c):
            raise GraphError(f"{path}: inconsistent alphabet sizes across blocks")
        types = [0] * n
        for ln in lines[1:1 + n]:
            i, t = (int(x) for x in ln.split())
            types[i] = t
        edges = []
        for ln in lines[1 + n:]:
            i, j, t = (int(x) for x in ln.split())
            edges.append((i, j, t))
        graphs.append(LabeledGraph.build(types, edges))
    if k is None:
        k, c = 1, 1
    return graphs, generic_alphabet(k, c)


def save_edge_lists(path: str, graphs: list[LabeledGraph], alphabet: Alphabet) -> None:
    k, c = alphabet.num_node_types, alphabet.num_edge_types
    with open(path, "w") as fh:
        for gi, g in enumerate(graphs):
            if gi:
                fh.write("\n")
            fh.write(f"{g.num_nodes} {k} {c}\n")
            for i, t in enumerate(g.node_types):
                fh.write(f"{i} {t}\n")
            for (i, j, t) in sorted(g.edges):
                fh.write(f"{i} {j} {t}\n")


def gen_community_small(count: int = 100, rng: np.random.Generator | None = None) -> list[LabeledGraph]:
    """Two-community graphs: each community Erdos-Renyi with size U[6,10] and
    intra-edge probability 0.7; inter-community edges at rate 0.05 * n with
    at least one forced so every graph is connected."""
    rng = rng or np.random.default_rng(0)
    graphs = []
    for _ in range(count):
        sizes = rng.integers(6, 11, size=2)
        n1, n2 = int(sizes[0]), int(sizes[1])
        n = n1 + n2
        edges = []
        for block, off in ((n1, 0), (n2, n1)):
            for i in range(block):
                for j in range(i + 1, block):
                    if rng.random() < 0.7:
                        edges.append((off + i, off + j, 0))
        n_inter = max(1, int(round(0.05 * n)))
        pairs = {(int(rng.integers(0, n1)), n1 + int(rng.integers(0, n2))) for _ in range(n_inter)}
        edges.extend((i, j, 0) for (i, j) in pairs)
        g = LabeledGraph.build([0] * n, edges)
        while not is_connected(g):
            i = int(rng.integers(0, n1))
            j = n1 + int(rng.integers(0, n2))
            if (i, j, 0) not in g.edges:
                g = g.with_edge(i, j, 0)
        graphs.append(g)
    return graphs


def random_molecules(count: int, alphabet: MoleculeAlphabet,
                     rng: np.random.Generator | None = None,
                     max_nodes: int = 9,
                     atom_weights: dict[str, float] | None = None,
                     ring_prob: float = 0.3) -> list[LabeledGraph]:
    """Seeded valency-legal molecules: grow a random spanning tree with
    weighted atoms and bond orders, then optionally close one ring.

    The resulting corpus has structure to learn (sparsity, valence budgets,
    atom frequencies) without external data files.
    """
    rng = rng or np.random.default_rng(0)
    weights = atom_weights or {"C": 0.7, "N": 0.1, "O": 0.15, "F": 0.05}
    syms = [s for s in alphabet.node_symbols if s in weights]
    probs = np.array([weights[s] for s in syms])
    probs = probs / probs.sum()
    type_ids = [alphabet.atom_index(s) for s in syms]
    bond_probs = np.array([0.85, 0.12, 0.03])
    caps = alphabet.max_valence

    out = []
    while len(out) < count:
        n = int(rng.integers(2, max_nodes + 1))
        types = [type_ids[rng.choice(len(type_ids), p=probs)] for _ in range(n)]
        val = [0] * n
        edges = []
        ok = True
        for i in range(1, n):
            hosts = [j for j in range(i) if val[j] < caps[types[j]]]
            if not hosts:
                ok = False
                break
            j = hosts[int(rng.integers(0, len(hosts)))]
            room = min(caps[types[i]], caps[types[j]] - val[j], 3)
            orders = [b for b in range(3) if b + 1 <= room]
            w = bond_probs[orders] / bond_probs[orders].sum()
            b = int(rng.choice(orders, p=w))
            edges.append((j, i, b))
            val[i] += b + 1
            val[j] += b + 1
        if not ok:
            continue
        if n >= 3 and rng.random() < ring_prob:
            present = {(min(a, b2), max(a, b2)) for (a, b2, _t) in edges}
            cands = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if (i, j) not in present
                     and val[i] < caps[types[i]] and val[j] < caps[types[j]]]
            if cands:
                i, j = cands[int(rng.integers(0, len(cands)))]
                edges.append((i, j, 0))
        out.append(LabeledGraph.build(types, edges))
    return out
