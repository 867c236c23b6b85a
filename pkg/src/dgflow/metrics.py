"""Generation metrics.

Molecules: validity, validity without the valency check, uniqueness, novelty
(all percentages) and reconstruction rate. Generic graphs: squared MMD with a
Gaussian kernel over first-Wasserstein distances between per-graph statistic
histograms (degree / clustering coefficient / 4-node graphlet orbits), with
optional node-count distribution matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .chem import canonical_form, check_valency
from .graphs import Alphabet, LabeledGraph

__all__ = [
    "MetricReport",
    "molecule_metrics",
    "mmd",
    "graph_statistic",
    "orbit_counts",
    "node_distribution_match",
]

MMD_SIGMA = 1.0
CLUSTER_BINS = 100


@dataclass
class MetricReport:
    """name -> (value, numerator, denominator) plus run metadata."""

    values: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, value: float, num: float = 0.0, den: float = 0.0) -> None:
        self.values[name] = (float(value), float(num), float(den))

    def __getitem__(self, name: str) -> float:
        return self.values[name][0]

    def to_text(self) -> str:
        lines = [f"{'metric':24s} {'value':>12s} {'num':>10s} {'den':>10s}"]
        for name, (v, n, d) in self.values.items():
            lines.append(f"{name:24s} {v:12.4f} {n:10.0f} {d:10.0f}")
        for k, v in self.metadata.items():
            lines.append(f"# {k} = {v}")
        return "\n".join(lines)

    def to_kv(self) -> str:
        rows = []
        for name, (v, n, d) in self.values.items():
            rows.append(f"{name}={v:.10g}")
            rows.append(f"{name}.num={n:.10g}")
            rows.append(f"{name}.den={d:.10g}")
        rows.extend(f"meta.{k}={v}" for k, v in self.metadata.items())
        return "\n".join(rows)


def molecule_metrics(samples: list[LabeledGraph], training_set: list[LabeledGraph] | set[str],
                     alphabet: Alphabet, model=None, reconstruction_sample: list[LabeledGraph] | None = None,
                     metadata: dict | None = None) -> MetricReport:
    """Validity / uniqueness / novelty over generated samples (percentages).

    Uniqueness and novelty are taken over valid molecules only; novelty
    counts every valid molecule absent from the training set (duplicates
    included). Reconstruction, when a model is given, is the fraction of
    reconstruction_sample (or the training set) that reconstruct() accepts.
    """
    if not samples:
        raise ValueError("empty sample set")
    report = MetricReport(metadata=metadata or {})
    valid = [g for g in samples if check_valency(g, alphabet)]
    report.add("validity", 100.0 * len(valid) / len(samples), len(valid), len(samples))
    if isinstance(training_set, set):
        train_canon = training_set
    else:
        train_canon = {canonical_form(g, alphabet) for g in training_set}
    if valid:
        canon = [canonical_form(g, alphabet) for g in valid]
        distinct = set(canon)
        novel = [c for c in canon if c not in train_canon]
        report.add("uniqueness", 100.0 * len(distinct) / len(valid), len(distinct), len(valid))
        report.add("novelty", 100.0 * len(novel) / len(valid), len(novel), len(valid))
    else:
        report.add("uniqueness", 0.0, 0, 0)
        report.add("novelty", 0.0, 0, 0)
    if model is not None:
        from .sampler import reconstruct

        subset = reconstruction_sample
        if subset is None:
            subset = list(training_set) if not isinstance(training_set, set) else []
        got = sum(1 for g in subset if reconstruct(model, g))
        report.add("reconstruction", 100.0 * got / max(1, len(subset)), got, len(subset))
    return report


# ---------------------------------------------------------------------------
# Graph statistics and MMD
# ---------------------------------------------------------------------------

def degree_histogram(g: LabeledGraph) -> np.ndarray:
    degs = [0] * g.num_nodes
    for (i, j, _t) in g.edges:
        degs[i] += 1
        degs[j] += 1
    return np.bincount(degs, minlength=1).astype(np.float64)


def clustering_histogram(g: LabeledGraph) -> np.ndarray:
    adj = [set() for _ in range(g.num_nodes)]
    for (i, j, _t) in g.edges:
        adj[i].add(j)
        adj[j].add(i)
    coeffs = []
    for v in range(g.num_nodes):
        k = len(adj[v])
        if k < 2:
            coeffs.append(0.0)
            continue
        links = sum(1 for a, b in combinations(sorted(adj[v]), 2) if b in adj[a])
        coeffs.append(2.0 * links / (k * (k - 1)))
    hist, _edges = np.histogram(coeffs, bins=CLUSTER_BINS, range=(0.0, 1.0))
    return hist.astype(np.float64)


_PAIR_IDX = list(combinations(range(4), 2))           # the 6 pairs of a 4-set
_NODE_PAIRS = [[p for p, pair in enumerate(_PAIR_IDX) if v in pair] for v in range(4)]


def orbit_counts(g: LabeledGraph, max_nodes: int = 64) -> np.ndarray:
    """Per-node counts over the 11 orbits of connected 4-node graphlets:
    path(end, mid), star(leaf, hub), cycle, tailed-triangle(tail, triangle,
    attach), diamond(rim, spine), clique. Brute-force over all 4-subsets."""
    n = g.num_nodes
    if n > max_nodes:
        raise ValueError(f"orbit_counts limited to {max_nodes} nodes, got {n}")
    counts = np.zeros((n, 11), dtype=np.int64)
    if n < 4:
        return counts
    adj = np.zeros((n, n), dtype=bool)
    for (i, j, _t) in g.edges:
        adj[i, j] = adj[j, i] = True
    subsets = np.array(list(combinations(range(n), 4)))
    present = np.stack([adj[subsets[:, a], subsets[:, b]] for (a, b) in _PAIR_IDX], axis=1)
    m = present.sum(axis=1)
    deg = np.stack([present[:, _NODE_PAIRS[v]].sum(axis=1) for v in range(4)], axis=1)
    connected = (m >= 3) & (deg.min(axis=1) >= 1)

    # orbit id from (edge count, in-subset degree)
    orbit = np.full((len(subsets), 4), -1, dtype=np.int64)
    m3 = connected & (m == 3)
    star = m3 & (deg.max(axis=1) == 3)
    path = m3 & ~star
    orbit[path] = np.where(deg[path] == 1, 0, 1)          # path end / middle
    orbit[star] = np.where(deg[star] == 1, 2, 3)          # star leaf / hub
    m4 = connected & (m == 4)
    tail = m4 & (deg.max(axis=1) == 3)
    cyc = m4 & ~tail
    orbit[cyc] = 4
    orbit[tail] = np.where(deg[tail] == 1, 5, np.where(deg[tail] == 2, 6, 7))
    m5 = connected & (m == 5)
    orbit[m5] = np.where(deg[m5] == 2, 8, 9)              # diamond rim / spine
    m6 = connected & (m == 6)
    orbit[m6] = 10
    rows = np.repeat(connected, 4)
    np.add.at(counts, (subsets.reshape(-1)[rows], orbit.reshape(-1)[rows]), 1)
    return counts


def orbit_histogram(g: LabeledGraph) -> np.ndarray:
    counts = orbit_counts(g)
    if counts.size == 0:
        return np.zeros(11)
    return counts.mean(axis=0).astype(np.float64)


def graph_statistic(g: LabeledGraph, kind: str) -> np.ndarray:
    if kind == "degree":
        return degree_histogram(g)
    if kind == "cluster":
        return clustering_histogram(g)
    if kind == "orbit":
        return orbit_histogram(g)
    raise ValueError(f"unknown statistic kind {kind!r}")


def _normalize(hist: np.ndarray) -> np.ndarray:
    total = hist.sum()
    if total <= 0:
        out = np.zeros(max(1, len(hist)))
        out[0] = 1.0
        return out
    return hist / total


def wasserstein1(h1: np.ndarray, h2: np.ndarray) -> float:
    """First Wasserstein distance between two histograms on a shared
    unit-spaced support (histograms are normalized; an all-zero histogram is
    treated as a point mass at the origin)."""
    width = max(len(h1), len(h2))
    p = np.zeros(width)
    q = np.zeros(width)
    p[:len(h1)] = _normalize(h1)
    q[:len(h2)] = _normalize(h2)
    return float(np.abs(np.cumsum(p - q)).sum())


def _kernel_matrix(stats_a: list[np.ndarray], stats_b: list[np.ndarray], sigma: float) -> np.ndarray:
    out = np.zeros((len(stats_a), len(stats_b)))
    for i, a in enumerate(stats_a):
        for j, b in enumerate(stats_b):
            d = wasserstein1(a, b)
            out[i, j] = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return out


def mmd(set_a: list[LabeledGraph], set_b: list[LabeledGraph], kind: str,
        sigma: float = MMD_SIGMA) -> float:
    """Squared MMD between two graph sets under the named statistic,
    clamped at zero."""
    if not set_a or not set_b:
        raise ValueError("mmd requires two nonempty sets")
    stats_a = [graph_statistic(g, kind) for g in set_a]
    stats_b = [graph_statistic(g, kind) for g in set_b]
    kaa = _kernel_matrix(stats_a, stats_a, sigma).mean()
    kbb = _kernel_matrix(stats_b, stats_b, sigma).mean()
    kab = _kernel_matrix(stats_a, stats_b, sigma).mean()
    return max(0.0, kaa + kbb - 2.0 * kab)


def node_distribution_match(generated: list[LabeledGraph], n_select: int,
                            reference_sizes: list[int]) -> list[LabeledGraph]:
    """Greedy subset of n_select generated graphs whose size histogram tracks
    the reference sizes: repeatedly take a graph from the size bucket with
    the largest remaining deficit."""
    if len(generated) < n_select:
        raise ValueError(f"need at least {n_select} generated graphs, have {len(generated)}")
    ref = np.bincount(reference_sizes).astype(np.float64)
    ref = ref / ref.sum() * n_select
    pools: dict[int, list[LabeledGraph]] = {}
    for g in generated:
        pools.setdefault(g.num_nodes, []).append(g)
    taken = np.zeros(max(len(ref), max(pools) + 1))
    target = np.zeros_like(taken)
    target[:len(ref)] = ref
    out: list[LabeledGraph] = []
    for _ in range(n_select):
        deficits = target - taken
        for size in np.argsort(-deficits):
            if pools.get(int(size)):
                out.append(pools[int(size)].pop())
                taken[int(size)] += 1
                break
    return out
