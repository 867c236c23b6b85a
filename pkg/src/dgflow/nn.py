"""Layers (linear/MLP, relational graph convolution, graph batch-norm,
sum-pooling), the Adam optimizer, and a byte-exact checkpoint container.

Batched conventions: a batch of M conditioning graphs is padded to N node
slots. Absent node slots carry zero feature rows and no adjacency, which
keeps their embeddings exactly zero through every R-GCN layer; masks keep
them out of normalization statistics and pooling sums.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "ParamStore",
    "init_uniform",
    "normalized_adjacency",
    "rgcn_forward",
    "batchnorm_nodes",
    "graph_embed",
    "mlp_forward",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ParamStore:
    """Named trainable tensors plus Adam moment buffers and non-trainable
    buffers (running statistics)."""

    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        t = ad.parameter(value, name=name)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self.buffers[name] = np.asarray(value, dtype=np.float64)
        return self.buffers[name]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def fill_missing_grads(self) -> None:
        """Zero gradients for parameters a loss did not touch (a batch with
        no edge decisions, say); their true gradient is exactly zero."""
        for t in self.params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.value)

    def clip_grad_norm(self, max_norm: float) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
        norm = float(np.sqrt(total))
        if norm > max_norm and norm > 0:
            scale = max_norm / norm
            for t in self.params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm

    def state_arrays(self, include_adam: bool = False) -> dict[str, np.ndarray]:
        out = {f"param.{k}": v.value for k, v in sorted(self.params.items())}
        out.update({f"buffer.{k}": v for k, v in sorted(self.buffers.items())})
        if include_adam:
            out.update({f"adam_m.{k}": v for k, v in sorted(self.adam_m.items())})
            out.update({f"adam_v.{k}": v for k, v in sorted(self.adam_v.items())})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for key, arr in arrays.items():
            kind, _, name = key.partition(".")
            if kind == "param":
                self.params[name].value = np.array(arr, dtype=np.float64)
            elif kind == "buffer":
                self.buffers[name][...] = arr
            elif kind == "adam_m":
                self.adam_m[name] = np.array(arr, dtype=np.float64)
            elif kind == "adam_v":
                self.adam_v[name] = np.array(arr, dtype=np.float64)
            else:
                raise CheckpointError(f"unknown state key {key!r}")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays(include_adam=True).items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.load_state_arrays({k: v.copy() for k, v in snap.items()})


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update; consumes every gradient exactly
    once (missing gradient is an error) and clears them."""
    store.step += 1
    t = store.step
    for name, p in store.params.items():
        if p.grad is None:
            raise ad.AutodiffError(f"adam_step: parameter {name!r} has no gradient")
        g = p.grad
        m = store.adam_m.get(name)
        v = store.adam_v.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        store.adam_m[name] = m
        store.adam_v[name] = v
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.value = p.value - lr * mhat / (np.sqrt(vhat) + eps)
        p.grad = None


# ---------------------------------------------------------------------------
# Graph layers
# ---------------------------------------------------------------------------

def normalized_adjacency(adj: np.ndarray) -> list[np.ndarray]:
    """Per edge type v: D^-1/2 (A_v + I) D^-1/2 with row-sum degrees.

    adj: (M, c, N, N) or (c, N, N). Returns one (M, N, N) (or (N, N)) array
    per edge type; plain numpy, treated as a constant by the tape.
    """
    single = adj.ndim == 3
    if single:
        adj = adj[None]
    _m, c, n, _n2 = adj.shape
    eye = np.eye(n)
    out = []
    for v in range(c):
        a = adj[:, v] + eye
        d = a.sum(axis=-1)
        dinv = 1.0 / np.sqrt(d)
        norm = a * dinv[:, :, None] * dinv[:, None, :]
        out.append(norm[0] if single else norm)
    return out


def rgcn_forward(x: Tensor | np.ndarray, norm_adj: list[np.ndarray],
                 weights: list[list[Tensor]]) -> Tensor:
    """Relational graph convolution: per layer, sum over edge types of
    ReLU(normalized_adjacency_v @ H @ W_v).

    x: (M, N, f) one-hot node features (or (N, f) for a single graph).
    weights: weights[layer][edge_type], shapes (f_in, r) then (r, r).
    """
    h = x if isinstance(x, Tensor) else ad.constant(x)
    if h.value.shape[-2] == 0:
        r = weights[-1][0].value.shape[1]
        return ad.constant(np.zeros(h.value.shape[:-2] + (0, r)))
    for layer in weights:
        acc = None
        for v, w in enumerate(layer):
            msg = ad.relu(ad.matmul(ad.constant(norm_adj[v]), ad.matmul(h, w)))
            acc = msg if acc is None else acc + msg
        h = acc
    return h


def batchnorm_nodes(h: Tensor, mask: np.ndarray, gamma: Tensor, beta: Tensor,
                    running_mean: np.ndarray, running_var: np.ndarray,
                    training: bool, eps: float = 1e-5, momentum: float = 0.9,
                    update_running: bool = True) -> Tensor:
    """Batch-norm over the node axis.

    Training mode normalizes each graph by its own (masked) node statistics
    and, when update_running is set, folds the pooled batch statistics into
    the running buffers with the given momentum. Inference mode uses the
    running buffers. Padded node slots stay exactly zero.

    h: (M, N, r); mask: (M, N) of 0/1.
    """
    m3 = mask[:, :, None]
    counts = np.maximum(mask.sum(axis=1), 1.0)[:, None, None]
    if training:
        mean = ad.tsum(h * m3, axis=1, keepdims=True) * (1.0 / counts)
        centered = (h - mean) * m3
        var = ad.tsum(centered * centered, axis=1, keepdims=True) * (1.0 / counts)
        xhat = centered / ad.sqrt(var + eps)
        if update_running:
            total = max(1.0, float(mask.sum()))
            pooled_mean = (h.value * m3).sum(axis=(0, 1)) / total
            pooled_var = (((h.value - pooled_mean) * m3) ** 2).sum(axis=(0, 1)) / total
            running_mean *= momentum
            running_mean += (1 - momentum) * pooled_mean
            running_var *= momentum
            running_var += (1 - momentum) * pooled_var
    else:
        xhat = ((h - ad.constant(running_mean)) / np.sqrt(running_var + eps)) * m3
    g3 = ad.reshape(gamma, (1, 1, -1))
    b3 = ad.reshape(beta, (1, 1, -1))
    return (xhat * g3 + b3) * m3


def graph_embed(h: Tensor, mask: np.ndarray, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, **bn_kwargs) -> Tensor:
    """Batch-norm then masked sum-pooling: (M, N, r) -> (M, r).

    An empty graph (all-zero mask row) pools to the zero vector.
    """
    normed = batchnorm_nodes(h, mask, gamma, beta, running_mean, running_var,
                             training, **bn_kwargs)
    return ad.tsum(normed, axis=1)


def mlp_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two fully-connected layers with tanh in between: x @ W1 + b1 -> tanh
    -> @ W2 + b2. Works for (M, f) inputs and, with stacked (D, f, h)
    weights, for per-shift-layer batches via einsum."""
    if w1.value.ndim == 2:
        hidden = ad.tanh(ad.matmul(x, w1) + b1)
        return ad.matmul(hidden, w2) + b2
    d = w1.value.shape[0]
    hid = ad.tanh(ad.einsum("mf,dfh->dmh", x, w1) + ad.reshape(b1, (d, 1, -1)))
    return ad.einsum("dmh,dhk->dmk", hid, w2) + ad.reshape(b2, (d, 1, -1))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"DGFCKPT1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Versioned container of named float64 arrays plus JSON metadata.

    Layout: magic, u64 header length, JSON header (sorted keys), raw
    little-endian float64 payloads in name order. Byte-exact round trip;
    identical inputs produce identical files.
    """
    entries = []
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = json.dumps({"version": 1, "meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.asarray(arrays[name], dtype="<f8", order="C").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        if header.get("version") != 1:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        payload = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays, header["meta"]
