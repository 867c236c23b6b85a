"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Design: a Tensor wraps an ndarray plus an optional tape node (parents and a
backward closure). Ops run eagerly; backward() on a scalar root walks the
tape once in reverse topological order. A trace may be consumed only once.

Every op output is checked for NaN/Inf (disable via FINITE_CHECKS for
profiling only; the library keeps it on).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "AutodiffError",
    "no_grad",
    "parameter",
    "constant",
    "matmul",
    "einsum",
    "relu",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "softmax",
    "log_softmax",
    "concat",
    "gather_rows",
    "minimum",
    "clip",
    "straight_through",
    "backward",
]

FINITE_CHECKS = True

_GRAD_ENABLED = [True]


class AutodiffError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _check_finite(arr: np.ndarray, opname: str) -> None:
    # summing is one allocation-free pass; NaN/Inf anywhere poisons the sum
    if FINITE_CHECKS and not np.isfinite(arr.sum()):
        if np.all(np.isfinite(arr)):  # astronomically large but finite values
            return
        raise AutodiffError(f"non-finite values produced by {opname}")


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_bw", "name", "_consumed")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 3:
            raise AutodiffError(f"tensors are limited to 3 axes, got shape {self.value.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[tuple["Tensor", Callable[[np.ndarray], np.ndarray]], ...] = ()
        self._bw = None
        self.name = name
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, grad={self.requires_grad}, name={self.name!r})"

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        backward(self)

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return _elementwise2(self, other, np.add, lambda g, a, b: g, lambda g, a, b: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _elementwise2(self, other, np.subtract, lambda g, a, b: g, lambda g, a, b: -g, "sub")

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        return _elementwise2(self, other, np.multiply,
                             lambda g, a, b: g * b, lambda g, a, b: g * a, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _elementwise2(self, other, np.divide,
                             lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b), "div")

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __neg__(self):
        return _unary(self, np.negative, lambda g, x, y: -g, "neg")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name: str = "") -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value, name: str = "") -> Tensor:
    return Tensor(value, requires_grad=False, name=name)


def _tape_on(*tensors: Tensor) -> bool:
    return _GRAD_ENABLED[-1] and any(t.requires_grad for t in tensors)


def _make(value: np.ndarray, parents, opname: str) -> Tensor:
    _check_finite(value, opname)
    out = Tensor(value)
    if parents:
        out.requires_grad = True
        out._parents = tuple(parents)
        out.name = opname
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _elementwise2(a, b, fn, da, db, opname):
    a, b = _as_tensor(a), _as_tensor(b)
    value = fn(a.value, b.value)
    if not _tape_on(a, b):
        return _make(value, (), opname)
    parents = []
    av, bv = a.value, b.value
    if a.requires_grad:
        parents.append((a, lambda g: _unbroadcast(da(g, av, bv), av.shape)))
    if b.requires_grad:
        parents.append((b, lambda g: _unbroadcast(db(g, av, bv), bv.shape)))
    return _make(value, parents, opname)


def _unary(x, fn, dx, opname):
    x = _as_tensor(x)
    value = fn(x.value)
    if not _tape_on(x):
        return _make(value, (), opname)
    xv = x.value
    return _make(value, [(x, lambda g, y=value: dx(g, xv, y))], opname)


def relu(x: Tensor) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v, y: g * (v > 0), "relu")


def tanh(x: Tensor) -> Tensor:
    return _unary(x, np.tanh, lambda g, v, y: g * (1.0 - y * y), "tanh")


def exp(x: Tensor) -> Tensor:
    return _unary(x, np.exp, lambda g, v, y: g * y, "exp")


def log(x: Tensor) -> Tensor:
    return _unary(x, np.log, lambda g, v, y: g / v, "log")


def sqrt(x: Tensor) -> Tensor:
    return _unary(x, np.sqrt, lambda g, v, y: g * 0.5 / y, "sqrt")


def square(x: Tensor) -> Tensor:
    return _unary(x, np.square, lambda g, v, y: g * 2.0 * v, "square")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    value = x.value.sum(axis=axis, keepdims=keepdims)
    if not _tape_on(x):
        return _make(value, (), "sum")
    shape = x.value.shape

    def bw(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape)

    return _make(value, [(x, bw)], "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.value.size if axis is None else x.value.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(a, b) -> Tensor:
    """2-D or equal-batch 3-D matrix product; one operand may be 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value @ b.value
    if not _tape_on(a, b):
        return _make(value, (), "matmul")
    av, bv = a.value, b.value
    parents = []
    if a.requires_grad:
        def ga(g):
            out = g @ np.swapaxes(bv, -1, -2)
            return _unbroadcast_matmul(out, av.shape)
        parents.append((a, ga))
    if b.requires_grad:
        def gb(g):
            if av.ndim == 3 and bv.ndim == 2:
                # batched activations against a shared weight: fold the batch
                # into one dgemm instead of summing per-item products
                f = av.shape[-1]
                return av.reshape(-1, f).T @ g.reshape(-1, g.shape[-1])
            out = np.swapaxes(av, -1, -2) @ g
            return _unbroadcast_matmul(out, bv.shape)
        parents.append((b, gb))
    return _make(value, parents, "matmul")


def _unbroadcast_matmul(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # a 2-D operand used against a 3-D batch: sum the batch axis
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra)))


def einsum(spec: str, *ops) -> Tensor:
    """Einsum restricted to contractions where every index of each operand
    also appears in the output or another operand, and no operand repeats an
    index (covers all matmul-like contractions used here)."""
    tens = [_as_tensor(o) for o in ops]
    ins, out = spec.replace(" ", "").split("->")
    labels = ins.split(",")
    value = np.einsum(spec, *[t.value for t in tens], optimize=True)
    if not _tape_on(*tens):
        return _make(value, (), "einsum")
    parents = []
    for i, t in enumerate(tens):
        if not t.requires_grad:
            continue
        others = [labels[j] for j in range(len(tens)) if j != i]
        other_vals = [tens[j].value for j in range(len(tens)) if j != i]
        gspec = ",".join([out] + others) + "->" + labels[i]

        def bw(g, gspec=gspec, other_vals=other_vals):
            return np.einsum(gspec, g, *other_vals, optimize=True)

        parents.append((t, bw))
    return _make(value, parents, "einsum")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = constant(x.value.max(axis=axis, keepdims=True))
    e = exp(x - shift)
    return e / tsum(e, axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = constant(x.value.max(axis=axis, keepdims=True))
    y = x - shift
    return y - log(tsum(exp(y), axis=axis, keepdims=True))


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    value = x.value.reshape(shape)
    if not _tape_on(x):
        return _make(value, (), "reshape")
    old = x.value.shape
    return _make(value, [(x, lambda g: g.reshape(old))], "reshape")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    x = _as_tensor(x)
    value = np.swapaxes(x.value, a, b)
    if not _tape_on(x):
        return _make(value, (), "swapaxes")
    return _make(value, [(x, lambda g: np.swapaxes(g, a, b))], "swapaxes")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tens = [_as_tensor(t) for t in tensors]
    value = np.concatenate([t.value for t in tens], axis=axis)
    if not _tape_on(*tens):
        return _make(value, (), "concat")
    sizes = [t.value.shape[axis] for t in tens]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, t in enumerate(tens):
        if not t.requires_grad:
            continue

        def bw(g, lo=offsets[i], hi=offsets[i + 1]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        parents.append((t, bw))
    return _make(value, parents, "concat")


def _getitem(x: Tensor, key) -> Tensor:
    x = _as_tensor(x)
    value = x.value[key]
    if not _tape_on(x):
        return _make(value, (), "getitem")
    shape = x.value.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return out

    return _make(value, [(x, bw)], "getitem")


def take_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """x[rows] along axis 0 for a *unique* index array (cheap scatter back)."""
    x = _as_tensor(x)
    value = x.value[rows]
    if not _tape_on(x):
        return _make(value, (), "take_rows")
    shape = x.value.shape

    def bw(g):
        out = np.zeros(shape)
        out[rows] = g
        return out

    return _make(value, [(x, bw)], "take_rows")


def gather_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """x: (M, N, r), rows: (M,) int -> (M, r) picking x[m, rows[m], :]."""
    x = _as_tensor(x)
    m = np.arange(x.value.shape[0])
    value = x.value[m, rows]
    if not _tape_on(x):
        return _make(value, (), "gather_rows")
    shape = x.value.shape

    def bw(g):
        out = np.zeros(shape)
        out[m, rows] = g  # (m, rows[m]) pairs are distinct by construction
        return out

    return _make(value, [(x, bw)], "gather_rows")


def minimum(a, b) -> Tensor:
    """Elementwise min; at ties the gradient follows the first argument."""
    return _elementwise2(a, b, np.minimum,
                         lambda g, x, y: g * (x <= y),
                         lambda g, x, y: g * (y < x),
                         "minimum")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    return _unary(x, lambda v: np.clip(v, lo, hi),
                  lambda g, v, y: g * ((v >= lo) & (v <= hi)), "clip")


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward takes the hard values; backward routes gradients to `soft`."""
    soft = _as_tensor(soft)
    if hard.shape != soft.value.shape:
        raise AutodiffError("straight_through shape mismatch")
    value = np.asarray(hard, dtype=np.float64)
    if not _tape_on(soft):
        return _make(value, (), "straight_through")
    return _make(value, [(soft, lambda g: g)], "straight_through")


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar root into every reachable parameter.

    The trace is single-use: running backward on an already-consumed root
    raises AutodiffError.
    """
    if root.value.size != 1:
        raise AutodiffError("backward needs a scalar root")
    if root._consumed:
        raise AutodiffError("this trace was already consumed by backward()")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _fn in node._parents:
            if id(parent) not in seen and parent._parents:
                stack.append((parent, False))
            elif id(parent) not in seen:
                seen.add(id(parent))
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._consumed:
            raise AutodiffError("this trace was already consumed by backward()")
        node._consumed = True
        for parent, fn in node._parents:
            pg = fn(g)
            if parent._parents:
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
            else:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
    # leaves reached directly (root is itself a leaf parameter)
    if not root._parents and root.requires_grad:
        root.grad = np.ones_like(root.value) if root.grad is None else root.grad + 1.0


def finite_difference(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-4) -> list[np.ndarray]:
    """Central-difference gradients of a scalar-valued closure, one array per
    parameter; the independent oracle for gradient tests."""
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = float(f().value)
            flat[i] = keep - step
            lo = float(f().value)
            flat[i] = keep
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads
