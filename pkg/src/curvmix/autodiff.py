"""Define-by-run reverse-mode differentiation over dense 2-D float64 arrays.

Every op appends a record (parents, vector-Jacobian product) to the tape of
its first taped input; ``Tape.backward`` walks the records once in reverse.
Operands without a tape are constants.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import manifolds

LOG_FLOOR = 1e-12
_NORM_FLOOR = 1e-12


class Tensor:
    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: Optional["Tape"] = None, node: int = -1):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise ValueError("tensors are 2-D")
        self.value = value
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() needs a 1x1 tensor")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        kind = "const" if self.tape is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {kind})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scalar_mul(self, 1.0 / float(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of operations for one forward pass."""

    def __init__(self):
        self._parents: list[tuple] = []
        self._vjps: list[Optional[Callable]] = []
        self._params: dict[str, int] = {}
        self._shapes: dict[str, tuple] = {}
        self._done = False

    def __len__(self):
        return len(self._parents)

    def param(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already on tape")
        node = self._append((), None)
        t = Tensor(np.array(value, dtype=np.float64), self, node)
        self._params[name] = node
        self._shapes[name] = t.shape
        return t

    def _append(self, parents, vjp) -> int:
        if self._done:
            raise RuntimeError("tape already consumed by backward(); call reset()")
        self._parents.append(parents)
        self._vjps.append(vjp)
        return len(self._parents) - 1

    def reset(self) -> None:
        self._parents.clear()
        self._vjps.clear()
        self._params.clear()
        self._shapes.clear()
        self._done = False

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of the 1x1 ``loss`` for every parameter on the tape."""
        if self._done:
            raise RuntimeError("backward() called twice without reset()")
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be 1x1, got {loss.shape}")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        self._done = True
        grads: list = [None] * len(self._parents)
        grads[loss.node] = np.ones((1, 1))
        for node in range(loss.node, -1, -1):
            g = grads[node]
            vjp = self._vjps[node]
            if g is None or vjp is None:
                continue
            parents = self._parents[node]
            for parent, pg in zip(parents, vjp(g)):
                if parent.tape is not self or pg is None:
                    continue
                if grads[parent.node] is None:
                    grads[parent.node] = np.array(pg, dtype=np.float64)
                else:
                    grads[parent.node] = grads[parent.node] + pg
        out = {}
        for name, node in self._params.items():
            g = grads[node]
            out[name] = np.zeros(self._shapes[name]) if g is None else g
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced by forward op")
    tape = next((p.tape for p in parents if p.tape is not None), None)
    if tape is None:
        return Tensor(value)
    node = tape._append(tuple(parents), vjp)
    return Tensor(value, tape, node)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# Elementwise and linear ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    """Hadamard product; row or column vectors broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value
    return _record(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


hadamard = mul


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _record(c * a.value, (a,), lambda g: (c * g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def sparse_matmul(adj, x) -> Tensor:
    """``adj @ x`` for a NormalizedAdjacency (or any scipy sparse matrix)."""
    x = _as_tensor(x)
    m = getattr(adj, "matrix", adj)
    if m.shape[1] != x.shape[0]:
        raise ValueError(f"sparse_matmul: incompatible shapes {m.shape} and {x.shape}")
    mt = m.T.tocsr()
    return _record(np.asarray(m @ x.value), (x,), lambda g: (np.asarray(mt @ g),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.value)
    return _record(y, (a,), lambda g: (g * (1 - y * y),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid(a.value)
    return _record(y, (a,), lambda g: (g * y * (1 - y),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.value)
    return _record(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    """log(x + 1e-12) for x >= 0."""
    a = _as_tensor(a)
    if np.any(a.value < 0):
        raise FloatingPointError("log of negative value")
    z = a.value + LOG_FLOOR
    return _record(np.log(z), (a,), lambda g: (g / z,))


# ---------------------------------------------------------------------------
# Reductions and row-wise ops


def row_sum(a) -> Tensor:
    a = _as_tensor(a)
    return _record(a.value.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    return _record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(a.shape, g[0, 0]),))


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size
    return _record(np.array([[a.value.mean()]]), (a,), lambda g: (np.full(a.shape, g[0, 0] / n),))


def row_softmax(a, temperature: float = 1.0) -> Tensor:
    """Softmax of ``a / temperature`` along each row (max-shifted)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    a = _as_tensor(a)
    z = a.value / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return ((y * (g - np.sum(g * y, axis=1, keepdims=True))) / temperature,)

    return _record(y, (a,), vjp)


def row_logsumexp(a) -> Tensor:
    a = _as_tensor(a)
    m = a.value.max(axis=1, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    return _record(m + np.log(s), (a,), lambda g: (g * p,))


def row_log_softmax(a) -> Tensor:
    a = _as_tensor(a)
    m = a.value.max(axis=1, keepdims=True)
    z = a.value - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _record(y, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def row_l2_normalize(a) -> Tensor:
    """Scale rows to unit norm; zero rows stay zero with zero gradient."""
    a = _as_tensor(a)
    n = np.linalg.norm(a.value, axis=1, keepdims=True)
    ok = n > _NORM_FLOOR
    safe = np.where(ok, n, 1.0)
    y = np.where(ok, a.value / safe, 0.0)

    def vjp(g):
        return (np.where(ok, (g - y * np.sum(g * y, axis=1, keepdims=True)) / safe, 0.0),)

    return _record(y, (a,), vjp)


def cosine_similarity_rows(a, b) -> Tensor:
    """Row-wise cosine similarity as an N x 1 column."""
    return row_sum(mul(row_l2_normalize(a), row_l2_normalize(b)))


def clip_row_norm(a, max_norm: float) -> Tensor:
    """Rescale rows whose norm exceeds ``max_norm`` onto that sphere."""
    a = _as_tensor(a)
    n = np.linalg.norm(a.value, axis=1, keepdims=True)
    over = n > max_norm
    safe = np.where(over, n, 1.0)
    y = np.where(over, a.value * (max_norm / safe), a.value)

    def vjp(g):
        u = a.value / safe
        clipped = max_norm / safe * (g - u * np.sum(g * u, axis=1, keepdims=True))
        return (np.where(over, clipped, g),)

    return _record(y, (a,), vjp)


def gather_rows(a, idx) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.value[idx], (a,), vjp)


def select_cols(a, cols) -> Tensor:
    a = _as_tensor(a)
    cols = np.asarray(cols, dtype=np.int64)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, (slice(None), cols), g)
        return (out,)

    return _record(a.value[:, cols], (a,), vjp)


def take_per_row(a, cols) -> Tensor:
    """Entry ``a[i, cols[i]]`` for each row, as an N x 1 column."""
    a = _as_tensor(a)
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def vjp(g):
        out = np.zeros(a.shape)
        out[rows, cols] = g[:, 0]
        return (out,)

    return _record(a.value[rows, cols][:, None], (a,), vjp)


def concat_cols(parts: Sequence) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if len({p.shape[0] for p in parts}) != 1:
        raise ValueError("concat_cols: row counts differ")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record(np.concatenate([p.value for p in parts], axis=1), parts, vjp)


# ---------------------------------------------------------------------------
# Manifold maps


def exp_origin(spec: manifolds.ManifoldSpec, a) -> Tensor:
    a = _as_tensor(a)
    v = a.value
    return _record(manifolds.exp_origin(spec, v), (a,), lambda g: (manifolds.vjp_exp_origin(spec, v, g),))


def log_origin(spec: manifolds.ManifoldSpec, a) -> Tensor:
    a = _as_tensor(a)
    x = a.value
    return _record(manifolds.log_origin(spec, x), (a,), lambda g: (manifolds.vjp_log_origin(spec, x, g),))
