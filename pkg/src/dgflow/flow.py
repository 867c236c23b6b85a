"""Discrete flow over graph token sequences.

Latents are integers drawn from trainable multinomial priors. A token is
produced by composing D modulo-shift transforms q^d(z) = (z + mu^d) mod t,
where each shift mu^d is the argmax of a small MLP head over an R-GCN
embedding of the sub-graph generated so far. The map is a permutation of
the categories for any shifts, so inversion is exact and the log-likelihood
is just the prior log-probability of the inverted latents: no Jacobian.

Training differentiates through the hard argmax with a straight-through
softmax(logits / tau) surrogate; a fully-soft mode exists for gradient
checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .graphs import Alphabet, GraphError, LabeledGraph, bfs_order, canonical_order

__all__ = [
    "FlowConfig",
    "Conditioning",
    "DiscreteFlowModel",
    "prior_sample",
    "node_shift",
    "edge_shift",
    "forward_token",
    "inverse_token",
    "log_likelihood",
    "surrogate_loss",
    "SequenceRecord",
    "record_from_graph",
    "build_condition_batch",
]


@dataclass(frozen=True)
class FlowConfig:
    num_shift_layers: int = 12   # D
    rgcn_layers: int = 3         # L
    embed_dim: int = 128         # node embedding width r (also R-GCN hidden)
    mlp_hidden: int = 128
    tau: float = 0.1             # straight-through softmax temperature

    def validate(self) -> None:
        if self.num_shift_layers < 1 or self.rgcn_layers < 1:
            raise ValueError("num_shift_layers and rgcn_layers must be >= 1")


class DiscreteFlowModel:
    """Trainable priors + shared R-GCN + per-shift-layer MLP heads."""

    def __init__(self, alphabet: Alphabet, config: FlowConfig | None = None, seed: int = 0):
        self.alphabet = alphabet
        self.config = config or FlowConfig()
        self.config.validate()
        self.store = nn.ParamStore()
        self._init_params(np.random.default_rng(seed))
        self._t_cache: dict[int, np.ndarray] = {}

    # -- parameters ---------------------------------------------------------
    def _init_params(self, rng: np.random.Generator) -> None:
        k = self.alphabet.num_node_types
        c = self.alphabet.num_edge_types
        cfg = self.config
        r, hid, d = cfg.embed_dim, cfg.mlp_hidden, cfg.num_shift_layers
        st = self.store
        st.add("prior.alpha", np.zeros(k))
        st.add("prior.beta", np.zeros(c + 1))
        f_in = k
        for layer in range(cfg.rgcn_layers):
            for v in range(c):
                st.add(f"rgcn.l{layer}.v{v}", nn.init_uniform(rng, (f_in, r), f_in))
            f_in = r
        st.add("bn.gamma", np.ones(r))
        st.add("bn.beta", np.zeros(r))
        st.add_buffer("bn.run_mean", np.zeros(r))
        st.add_buffer("bn.run_var", np.ones(r))
        for head, width_in, width_out in (("node", r, k), ("edge", 3 * r, c + 1)):
            st.add(f"{head}.W1", nn.init_uniform(rng, (d, width_in, hid), width_in))
            st.add(f"{head}.b1", nn.init_uniform(rng, (d, hid), width_in))
            st.add(f"{head}.W2", nn.init_uniform(rng, (d, hid, width_out), hid))
            st.add(f"{head}.b2", nn.init_uniform(rng, (d, width_out), hid))

    @property
    def rgcn_weights(self) -> list[list[Tensor]]:
        c = self.alphabet.num_edge_types
        return [[self.store.params[f"rgcn.l{layer}.v{v}"] for v in range(c)]
                for layer in range(self.config.rgcn_layers)]

    def copy(self) -> "DiscreteFlowModel":
        clone = DiscreteFlowModel(self.alphabet, self.config, seed=0)
        clone.store.restore(self.store.snapshot())
        return clone

    # -- persistence ---------------------------------------------------------
    def save(self, path: str, include_adam: bool = False, extra_meta: dict | None = None) -> None:
        meta = {
            "kind": "dgflow-model",
            "node_symbols": list(self.alphabet.node_symbols),
            "edge_symbols": list(self.alphabet.edge_symbols),
            "max_valence": list(self.alphabet.max_valence),
            "molecule": self.alphabet.__class__.__name__ == "MoleculeAlphabet",
            "config": {
                "num_shift_layers": self.config.num_shift_layers,
                "rgcn_layers": self.config.rgcn_layers,
                "embed_dim": self.config.embed_dim,
                "mlp_hidden": self.config.mlp_hidden,
                "tau": self.config.tau,
            },
        }
        if extra_meta:
            meta.update(extra_meta)
        nn.save_checkpoint(path, self.store.state_arrays(include_adam=include_adam), meta)

    @staticmethod
    def load(path: str) -> "DiscreteFlowModel":
        from .chem import MoleculeAlphabet

        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "dgflow-model":
            raise nn.CheckpointError(f"{path}: not a model checkpoint")
        cls = MoleculeAlphabet if meta.get("molecule") else Alphabet
        alphabet = cls(
            node_symbols=tuple(meta["node_symbols"]),
            edge_symbols=tuple(meta["edge_symbols"]),
            max_valence=tuple(meta["max_valence"]),
        )
        model = DiscreteFlowModel(alphabet, FlowConfig(**meta["config"]))
        model.store.load_state_arrays(arrays)
        return model

    # -- priors ---------------------------------------------------------------
    def prior_probs(self, kind: str, t1: float = 1.0, t2: float = 1.0) -> np.ndarray:
        """Sampling distribution over latents. Node priors scale logits by
        t1; edge priors divide by t2 (the two temperatures act differently
        on purpose)."""
        if kind == "node":
            logits = self.store.params["prior.alpha"].value * t1
        elif kind == "edge":
            logits = self.store.params["prior.beta"].value / t2
        else:
            raise ValueError(f"unknown prior kind {kind!r}")
        e = np.exp(logits - logits.max())
        return e / e.sum()

    def prior_logprobs(self, kind: str) -> np.ndarray:
        """Untempered log-probabilities used by likelihoods."""
        logits = (self.store.params["prior.alpha"] if kind == "node"
                  else self.store.params["prior.beta"]).value
        shifted = logits - logits.max()
        return shifted - math.log(np.exp(shifted).sum())

    # -- embeddings ------------------------------------------------------------
    def embed_batch(self, x: np.ndarray, adj: np.ndarray, mask: np.ndarray,
                    training: bool, update_running: bool = True) -> tuple[Tensor, Tensor]:
        """R-GCN node embeddings and pooled graph embeddings for a padded
        batch: x (M,N,k), adj (M,c,N,N), mask (M,N) -> H (M,N,r), h (M,r)."""
        norm = nn.normalized_adjacency(adj)
        h_nodes = nn.rgcn_forward(x, norm, self.rgcn_weights)
        st = self.store
        pooled = nn.graph_embed(
            h_nodes, mask, st.params["bn.gamma"], st.params["bn.beta"],
            st.buffers["bn.run_mean"], st.buffers["bn.run_var"],
            training=training, update_running=update_running)
        return h_nodes, pooled

    def head_logits(self, head: str, x: Tensor) -> Tensor:
        """Stacked MLP heads: x (M, f) -> logits (D, M, width)."""
        st = self.store
        return nn.mlp_forward(x, st.params[f"{head}.W1"], st.params[f"{head}.b1"],
                              st.params[f"{head}.W2"], st.params[f"{head}.b2"])

    def shift_matrix(self, t: int) -> np.ndarray:
        """Constant tensor T[m, u, s] = 1 iff u == (s + m) mod t, so that the
        one-hot of (z - m) mod t is einsum('m,u->s', onehot(m), onehot(z), T)."""
        cached = self._t_cache.get(t)
        if cached is None:
            m, u, s = np.ogrid[0:t, 0:t, 0:t]
            cached = (u == (s + m) % t).astype(np.float64)
            self._t_cache[t] = cached
        return cached

    def num_params(self) -> int:
        return sum(p.value.size for p in self.store.params.values())


@dataclass(frozen=True)
class Conditioning:
    """Sub-graph context for one decision. For an edge decision the graph
    already contains the new node; focus_new/focus_old are its index and the
    partner's index."""

    graph: LabeledGraph
    focus_new: int | None = None
    focus_old: int | None = None


def prior_sample(model: DiscreteFlowModel, kind: str, rng: np.random.Generator,
                 t1: float = 1.0, t2: float = 1.0) -> int:
    """Draw a latent from the (temperature-adjusted) prior."""
    if min(t1, t2) <= 0:
        raise ValueError("temperatures must be > 0")
    probs = model.prior_probs(kind, t1, t2)
    return int(rng.choice(len(probs), p=probs))


def _single_embedding(model: DiscreteFlowModel, g: LabeledGraph) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode H (n,r) and h (r,) for one graph; empty graph gives zeros."""
    n = g.num_nodes
    r = model.config.embed_dim
    if n == 0:
        return np.zeros((0, r)), np.zeros(r)
    k = model.alphabet.num_node_types
    c = model.alphabet.num_edge_types
    x = np.zeros((1, n, k))
    x[0, np.arange(n), list(g.node_types)] = 1.0
    adj = np.zeros((1, c, n, n))
    for (i, j, t) in g.edges:
        adj[0, t, i, j] = adj[0, t, j, i] = 1.0
    with ad.no_grad():
        h_nodes, pooled = model.embed_batch(x, adj, np.ones((1, n)), training=False)
    return h_nodes.value[0], pooled.value[0]


def _shift_stack(model: DiscreteFlowModel, head: str, features: np.ndarray) -> np.ndarray:
    """All D shifts for a feature batch: (M, f) -> (D, M) integer argmaxes
    (ties resolve to the lowest index)."""
    with ad.no_grad():
        logits = model.head_logits(head, ad.constant(features))
    return logits.value.argmax(axis=-1)


def node_shift(model: DiscreteFlowModel, cond: Conditioning, d: int) -> int:
    """Shift mu^d for a node decision conditioned on the current sub-graph."""
    _check_layer(model, d)
    _h, pooled = _single_embedding(model, cond.graph)
    return int(_shift_stack(model, "node", pooled[None, :])[d - 1, 0])


def edge_shift(model: DiscreteFlowModel, cond: Conditioning, d: int) -> int:
    """Shift mu^d for an edge decision; features are the concatenation of the
    graph embedding with the new node's and the partner's embeddings."""
    _check_layer(model, d)
    if cond.focus_new is None or cond.focus_old is None:
        raise GraphError("edge conditioning requires focus_new and focus_old")
    n = cond.graph.num_nodes
    if not (0 <= cond.focus_new < n and 0 <= cond.focus_old < n):
        raise GraphError("focus node missing from conditioning graph")
    h_nodes, pooled = _single_embedding(model, cond.graph)
    feats = np.concatenate([pooled, h_nodes[cond.focus_new], h_nodes[cond.focus_old]])
    return int(_shift_stack(model, "edge", feats[None, :])[d - 1, 0])


def _check_layer(model: DiscreteFlowModel, d: int) -> None:
    if not (1 <= d <= model.config.num_shift_layers):
        raise ValueError(f"shift layer {d} outside [1, {model.config.num_shift_layers}]")


def _total_shift(model: DiscreteFlowModel, cond: Conditioning, kind: str) -> int:
    if kind == "node":
        _h, pooled = _single_embedding(model, cond.graph)
        shifts = _shift_stack(model, "node", pooled[None, :])
        t = model.alphabet.num_node_types
    else:
        if cond.focus_new is None or cond.focus_old is None:
            raise GraphError("edge conditioning requires focus_new and focus_old")
        h_nodes, pooled = _single_embedding(model, cond.graph)
        feats = np.concatenate([pooled, h_nodes[cond.focus_new], h_nodes[cond.focus_old]])
        shifts = _shift_stack(model, "edge", feats[None, :])
        t = model.alphabet.num_edge_types + 1
    return int(shifts[:, 0].sum()) % t


def forward_token(model: DiscreteFlowModel, z: int, cond: Conditioning, kind: str) -> int:
    """Latent -> token: composition of the D modulo shifts."""
    t = model.alphabet.num_node_types if kind == "node" else model.alphabet.num_edge_types + 1
    if not (0 <= z < t):
        raise ValueError(f"latent {z} outside [0,{t})")
    return (z + _total_shift(model, cond, kind)) % t


def inverse_token(model: DiscreteFlowModel, token: int, cond: Conditioning, kind: str) -> int:
    """Token -> latent: exact inverse of forward_token under the same
    conditioning."""
    t = model.alphabet.num_node_types if kind == "node" else model.alphabet.num_edge_types + 1
    if not (0 <= token < t):
        raise ValueError(f"token {token} outside [0,{t})")
    return (token - _total_shift(model, cond, kind)) % t


# ---------------------------------------------------------------------------
# Batched teacher-forced conditioning
# ---------------------------------------------------------------------------

@dataclass
class SequenceRecord:
    """One token sequence: node types and adjacency in sequence order.

    num_positions truncates episodes that stopped early; start_position skips
    the decisions covered by a pre-existing initial state (constrained
    optimization), which were never sampled.
    """

    node_types: np.ndarray          # (n,) int
    adj: np.ndarray                 # (c, n, n) float 0/1
    num_positions: int | None = None
    start_position: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    def positions(self) -> list[tuple[int, int, int]]:
        """(kind, new_index, partner_index) per decision, kind 0=node 1=edge."""
        out = []
        for i in range(self.num_nodes):
            out.append((0, i, -1))
            for j in range(i):
                out.append((1, i, j))
        if self.num_positions is not None:
            out = out[: self.num_positions]
        return out[self.start_position:]

    def tokens(self, no_edge_index: int) -> np.ndarray:
        toks = []
        for (kind, i, j) in self.positions():
            if kind == 0:
                toks.append(int(self.node_types[i]))
            else:
                types_here = np.nonzero(self.adj[:, i, j])[0]
                toks.append(int(types_here[0]) if len(types_here) else no_edge_index)
        return np.array(toks, dtype=np.int64)


def record_from_graph(g: LabeledGraph, alphabet: Alphabet, canonicalize: bool = True) -> SequenceRecord:
    """Order a connected graph into a SequenceRecord, validating types.

    The node order is a BFS of the refinement-canonicalized graph, so the
    resulting sequence (and hence the likelihood) does not depend on how the
    caller happened to index the nodes.
    """
    k, c = alphabet.num_node_types, alphabet.num_edge_types
    if any(not (0 <= t < k) for t in g.node_types):
        raise GraphError("node type outside alphabet")
    if any(not (0 <= t < c) for (_i, _j, t) in g.edges):
        raise GraphError("edge type outside alphabet")
    if canonicalize:
        rel = g.relabel(canonical_order(g))
        rel = rel.relabel(bfs_order(rel))
    else:
        rel = g
    n = rel.num_nodes
    adj = np.zeros((c, n, n))
    for (i, j, t) in rel.edges:
        adj[t, i, j] = adj[t, j, i] = 1.0
    return SequenceRecord(np.array(rel.node_types, dtype=np.int64), adj)


def build_condition_batch(records: list[SequenceRecord], alphabet: Alphabet,
                          pad_to: int | None = None) -> dict:
    """Assemble every decision position of every record into padded arrays.

    Each position's conditioning graph is a masked prefix of its record's
    final adjacency (teacher forcing), so assembly is pure gather/multiply.
    """
    k, c = alphabet.num_node_types, alphabet.num_edge_types
    n_max = max((r.num_nodes for r in records), default=1)
    big = max(pad_to or 0, n_max)

    gidx, kinds, new_idx, old_idx, tokens = [], [], [], [], []
    for gi, rec in enumerate(records):
        for (kind, i, j) in rec.positions():
            gidx.append(gi)
            kinds.append(kind)
            new_idx.append(i)
            old_idx.append(j)
        tokens.append(rec.tokens(alphabet.no_edge_index))
    gidx = np.array(gidx, dtype=np.int64)
    kinds = np.array(kinds, dtype=np.int64)
    new_idx = np.array(new_idx, dtype=np.int64)
    old_idx = np.array(old_idx, dtype=np.int64)
    tokens = np.concatenate(tokens) if tokens else np.zeros(0, dtype=np.int64)
    m = len(gidx)

    x_full = np.zeros((len(records), big, k))
    a_full = np.zeros((len(records), c, big, big))
    for gi, rec in enumerate(records):
        n = rec.num_nodes
        x_full[gi, np.arange(n), rec.node_types] = 1.0
        a_full[gi, :, :n, :n] = rec.adj

    # nodes present: i for a node decision, i + 1 for an edge decision
    counts = new_idx + kinds
    ar = np.arange(big)
    node_mask = (ar[None, :] < counts[:, None]).astype(np.float64)
    xb = x_full[gidx] * node_mask[:, :, None]

    # pairs present: both endpoints below the new node, plus (for edge
    # decisions) the new node's already-decided partners below j
    base = ar[None, :] < new_idx[:, None]
    pair = base[:, :, None] & base[:, None, :]
    is_edge = kinds == 1
    if is_edge.any():
        at_new = ar[None, :] == new_idx[:, None]
        below_j = ar[None, :] < old_idx[:, None]
        extra = (at_new[:, :, None] & below_j[:, None, :]) | (at_new[:, None, :] & below_j[:, :, None])
        pair = pair | (extra & is_edge[:, None, None])
    ab = a_full[gidx] * pair[:, None, :, :].astype(np.float64)

    return {
        "x": xb, "adj": ab, "mask": node_mask, "gidx": gidx,
        "kinds": kinds, "new_idx": new_idx, "old_idx": old_idx,
        "tokens": tokens, "num_records": len(records), "num_positions": m,
    }


def _group_features(model: DiscreteFlowModel, batch: dict, training: bool,
                    update_running: bool = True) -> tuple[Tensor | None, Tensor | None, dict]:
    """Run the shared R-GCN once and split pooled/concatenated features into
    the node-decision and edge-decision groups."""
    h_nodes, pooled = model.embed_batch(batch["x"], batch["adj"], batch["mask"],
                                        training=training, update_running=update_running)
    node_rows = np.nonzero(batch["kinds"] == 0)[0]
    edge_rows = np.nonzero(batch["kinds"] == 1)[0]
    groups = {"node_rows": node_rows, "edge_rows": edge_rows}
    node_feats = ad.take_rows(pooled, node_rows) if len(node_rows) else None
    edge_feats = None
    if len(edge_rows):
        pe = ad.take_rows(pooled, edge_rows)
        he = ad.take_rows(h_nodes, edge_rows)
        hn = ad.gather_rows(he, batch["new_idx"][edge_rows])
        ho = ad.gather_rows(he, batch["old_idx"][edge_rows])
        edge_feats = ad.concat([pe, hn, ho], axis=-1)
    return node_feats, edge_feats, groups


def _onehot(idx: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(idx), width))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _invert_group(model: DiscreteFlowModel, feats: Tensor, head: str, tokens: np.ndarray,
                  width: int, mode: str) -> tuple[Tensor, np.ndarray]:
    """Push token one-hots backward through the D shifts, differentiably.

    Returns (u, z): u (M, width) is the one-hot (or soft relaxation) of the
    latent; z are the integer latents from the hard path.
    """
    cfg = model.config
    logits = model.head_logits(head, feats)           # (D, M, width)
    soft = ad.softmax(logits * (1.0 / cfg.tau), axis=-1)
    mu = logits.value.argmax(axis=-1)                  # (D, M) hard shifts
    tmat = ad.constant(model.shift_matrix(width))
    u = ad.constant(_onehot(tokens, width))
    for d in reversed(range(cfg.num_shift_layers)):
        if mode == "straight_through":
            factor = ad.straight_through(_onehot(mu[d], width), soft[d])
        elif mode == "soft":
            factor = soft[d]
        else:
            raise ValueError(f"unknown surrogate mode {mode!r}")
        spread = ad.einsum("pt,mts->pms", u, tmat)
        u = ad.einsum("pm,pms->ps", factor, spread)
    z = (tokens - mu.sum(axis=0)) % width
    return u, z


def log_likelihood(model: DiscreteFlowModel, g: LabeledGraph) -> float:
    """Exact log-probability of generating g's BFS sequence (inference mode)."""
    return float(batch_log_likelihood(model, [g])[0])


def batch_log_likelihood(model: DiscreteFlowModel, graphs: list[LabeledGraph]) -> np.ndarray:
    """Per-graph log-likelihoods, teacher-forced and batched."""
    records = [record_from_graph(g, model.alphabet) for g in graphs]
    return batch_record_log_likelihood(model, records)


def batch_record_log_likelihood(model: DiscreteFlowModel, records: list[SequenceRecord]) -> np.ndarray:
    alphabet = model.alphabet
    k, c1 = alphabet.num_node_types, alphabet.num_edge_types + 1
    out = np.zeros(len(records))
    batch = build_condition_batch(records, alphabet)
    with ad.no_grad():
        node_feats, edge_feats, groups = _group_features(model, batch, training=False)
        log_alpha = model.prior_logprobs("node")
        log_beta = model.prior_logprobs("edge")
        for head, feats, rows, width, logp in (
            ("node", node_feats, groups["node_rows"], k, log_alpha),
            ("edge", edge_feats, groups["edge_rows"], c1, log_beta),
        ):
            if feats is None:
                continue
            mu = _shift_stack(model, head, feats.value)
            z = (batch["tokens"][rows] - mu.sum(axis=0)) % width
            np.add.at(out, batch["gidx"][rows], logp[z])
    return out


def surrogate_loss(model: DiscreteFlowModel, graphs: list[LabeledGraph],
                   mode: str = "straight_through", training: bool = True,
                   update_running: bool = True) -> Tensor:
    """Mean negative log-likelihood with gradients.

    mode "straight_through": hard argmax shifts forward, softmax(logits/tau)
    Jacobian backward. mode "soft": the fully relaxed surrogate (every shift
    a softmax), used for finite-difference checks.
    """
    if not graphs:
        raise ValueError("empty batch")
    records = [record_from_graph(g, model.alphabet) for g in graphs]
    return surrogate_loss_from_records(model, records, mode=mode, training=training,
                                       update_running=update_running)


def surrogate_loss_from_records(model: DiscreteFlowModel, records: list[SequenceRecord],
                                mode: str = "straight_through", training: bool = True,
                                update_running: bool = True) -> Tensor:
    alphabet = model.alphabet
    k, c1 = alphabet.num_node_types, alphabet.num_edge_types + 1
    batch = build_condition_batch(records, alphabet)
    node_feats, edge_feats, groups = _group_features(model, batch, training=training,
                                                     update_running=update_running)
    total = ad.constant(0.0)
    for head, feats, rows, width, prior in (
        ("node", node_feats, groups["node_rows"], k, "prior.alpha"),
        ("edge", edge_feats, groups["edge_rows"], c1, "prior.beta"),
    ):
        if feats is None:
            continue
        u, _z = _invert_group(model, feats, head, batch["tokens"][rows], width, mode)
        logp = ad.log_softmax(ad.reshape(model.store.params[prior], (1, width)), axis=-1)
        total = total + ad.tsum(u * logp)
    loss = -total * (1.0 / batch["num_records"])
    if not np.isfinite(loss.value):
        raise ad.AutodiffError("non-finite surrogate loss")
    return loss
