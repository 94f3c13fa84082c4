"""Dense float64 tensors with tape-based reverse-mode differentiation.

The op set is deliberately closed: it covers exactly what the embedding
model, the attribute encoders and the losses need. Values are numpy arrays
of at most two dimensions (0-d scalars, 1-d vectors, 2-d matrices); there
is no broadcasting, no sparse storage and no higher-order gradients.

Ops executed inside a ``with Tape():`` block record themselves on that
tape; outside a tape they are plain forward computations, which is how
evaluation code runs the model without paying for bookkeeping.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError

_LOCAL = threading.local()


def active_tape() -> "Tape | None":
    return getattr(_LOCAL, "tape", None)


class Tape:
    """Recorded operations in creation order.

    Creation order is already a topological order (an op can only consume
    tensors that exist), so the backward pass is a single reverse sweep.
    A tape is confined to the thread that opened it; nested tapes restore
    the previous one on exit.
    """

    def __init__(self) -> None:
        self.records: list[Tensor] = []
        # insertion-ordered registry of parameter leaves touched by any op
        self.params: dict[int, "Tensor"] = {}
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        self._outer = active_tape()
        _LOCAL.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _LOCAL.tape = self._outer
        self._outer = None


class Tensor:
    """A float64 array plus the plumbing reverse mode needs.

    ``grad`` stays ``None`` until the backward sweep reaches the tensor.
    Leaves created with ``parameter`` receive gradients; plain constants
    never do.
    """

    __slots__ = ("data", "grad", "is_param", "name", "_parents", "_backward")

    def __init__(self, data, *, is_param: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-d, got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError(f"zero-size tensor is not allowed (shape {arr.shape})")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.is_param = is_param
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != ():
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.is_param else "tensor")
        return f"Tensor({tag}, shape={self.data.shape})"


def parameter(data, name: str | None = None) -> Tensor:
    """A trainable leaf: receives a gradient after every backward pass."""
    return Tensor(data, is_param=True, name=name)


def constant(data, name: str | None = None) -> Tensor:
    """A non-trainable leaf: never receives a gradient."""
    return Tensor(data, is_param=False, name=name)


def _make(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None:
        out._parents = parents
        out._backward = backward
        tape.records.append(out)
        reg = tape.params
        for p in parents:
            if p.is_param:
                reg.setdefault(id(p), p)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # constants do not accumulate; this also prunes dead subgraphs
    if t._backward is None and not t.is_param:
        return
    if t.grad is None:
        t.grad = np.array(g)  # copy: g may alias another tensor's grad
    else:
        t.grad += g


def _accum_rows(t: Tensor, idx, g: np.ndarray) -> None:
    if t._backward is None and not t.is_param:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    np.add.at(t.grad, idx, g)


def backward(tape: Tape, root: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar root; returns grads of parameter leaves.

    Every parameter leaf touched by an op on the tape ends up with a
    gradient of its own shape (zeros if the root does not depend on it).
    """
    if root.shape != ():
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    root.grad = np.ones((), dtype=np.float64)
    for out in reversed(tape.records):
        if out.grad is not None and out._backward is not None:
            out._backward(out.grad)
    grads: dict[Tensor, np.ndarray] = {}
    for p in tape.params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        grads[p] = p.grad
    return grads


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), back)


def scale(a: Tensor, factor: float) -> Tensor:
    c = float(factor)

    def back(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), back)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul: shapes {a.shape} and {b.shape} differ")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), back)


def dot(u: Tensor, v: Tensor) -> Tensor:
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"dot: needs equal-length vectors, got {u.shape} and {v.shape}")

    def back(g):
        _accum(u, g * v.data)
        _accum(v, g * u.data)

    return _make(np.asarray(u.data @ v.data), (u, v), back)


# ---------------------------------------------------------------------------
# linear algebra

def matvec(m: Tensor, v: Tensor) -> Tensor:
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {m.shape} and {v.shape}")

    def back(g):
        _accum(m, np.outer(g, v.data))
        _accum(v, m.data.T @ g)

    return _make(m.data @ v.data, (m, v), back)


def vecmat(v: Tensor, m: Tensor) -> Tensor:
    if v.data.ndim != 1 or m.data.ndim != 2 or v.shape[0] != m.shape[0]:
        raise ShapeError(f"vecmat: incompatible shapes {v.shape} and {m.shape}")

    def back(g):
        _accum(v, m.data @ g)
        _accum(m, np.outer(v.data, g))

    return _make(v.data @ m.data, (v, m), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back)


def transpose(m: Tensor) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeError(f"transpose: needs a matrix, got shape {m.shape}")

    def back(g):
        _accum(m, g.T)

    return _make(np.ascontiguousarray(m.data.T), (m,), back)


# ---------------------------------------------------------------------------
# structure: lookups, stacking, slicing, reductions

def row(m: Tensor, i: int) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeError(f"row: needs a matrix, got shape {m.shape}")
    if not 0 <= i < m.shape[0]:
        raise IndexError(f"row {i} out of range for matrix with {m.shape[0]} rows")

    def back(g):
        if m._backward is None and not m.is_param:
            return
        if m.grad is None:
            m.grad = np.zeros_like(m.data)
        m.grad[i] += g

    return _make(m.data[i].copy(), (m,), back)


def rows(m: Tensor, indices) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeError(f"rows: needs a matrix, got shape {m.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("rows: needs a non-empty 1-d index list")
    if idx.min() < 0 or idx.max() >= m.shape[0]:
        raise IndexError(f"rows: index out of range for matrix with {m.shape[0]} rows")

    def back(g):
        _accum_rows(m, idx, g)

    return _make(m.data[idx], (m,), back)


def take(v: Tensor, indices) -> Tensor:
    if v.data.ndim != 1:
        raise ShapeError(f"take: needs a vector, got shape {v.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("take: needs a non-empty 1-d index list")
    if idx.min() < 0 or idx.max() >= v.shape[0]:
        raise IndexError(f"take: index out of range for vector of length {v.shape[0]}")

    def back(g):
        _accum_rows(v, idx, g)

    return _make(v.data[idx], (v,), back)


def concat(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat: needs vectors, got shape {p.shape}")
    parts = tuple(parts)
    sizes = [p.shape[0] for p in parts]

    def back(g):
        off = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[off:off + n])
            off += n

    return _make(np.concatenate([p.data for p in parts]), parts, back)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("stack_rows: needs at least one tensor")
    width = parts[0].shape
    for p in parts:
        if p.data.ndim != 1 or p.shape != width:
            raise ShapeError(f"stack_rows: needs equal-length vectors, got {p.shape} vs {width}")
    parts = tuple(parts)

    def back(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return _make(np.stack([p.data for p in parts]), parts, back)


def slice_vec(v: Tensor, start: int, stop: int) -> Tensor:
    if v.data.ndim != 1:
        raise ShapeError(f"slice_vec: needs a vector, got shape {v.shape}")
    if not 0 <= start < stop <= v.shape[0]:
        raise ShapeError(f"slice_vec: bad range [{start}, {stop}) for length {v.shape[0]}")

    def back(g):
        if v._backward is None and not v.is_param:
            return
        if v.grad is None:
            v.grad = np.zeros_like(v.data)
        v.grad[start:stop] += g

    return _make(v.data[start:stop].copy(), (v,), back)


def slice_rows(m: Tensor, start: int, stop: int) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeError(f"slice_rows: needs a matrix, got shape {m.shape}")
    if not 0 <= start < stop <= m.shape[0]:
        raise ShapeError(f"slice_rows: bad range [{start}, {stop}) for {m.shape[0]} rows")

    def back(g):
        if m._backward is None and not m.is_param:
            return
        if m.grad is None:
            m.grad = np.zeros_like(m.data)
        m.grad[start:stop] += g

    return _make(m.data[start:stop].copy(), (m,), back)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix (bias add)."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: incompatible shapes {m.shape} and {v.shape}")

    def back(g):
        _accum(m, g)
        _accum(v, g.sum(axis=0))

    return _make(m.data + v.data, (m, v), back)


def sum_rows(m: Tensor) -> Tensor:
    """Sum over rows: (p, q) -> (q,)."""
    if m.data.ndim != 2:
        raise ShapeError(f"sum_rows: needs a matrix, got shape {m.shape}")

    def back(g):
        _accum(m, np.broadcast_to(g, m.shape))

    return _make(m.data.sum(axis=0), (m,), back)


def sum_cols(m: Tensor) -> Tensor:
    """Sum over columns: (p, q) -> (p,)."""
    if m.data.ndim != 2:
        raise ShapeError(f"sum_cols: needs a matrix, got shape {m.shape}")

    def back(g):
        _accum(m, np.broadcast_to(g[:, None], m.shape))

    return _make(m.data.sum(axis=1), (m,), back)


def sum_all(t: Tensor) -> Tensor:
    def back(g):
        _accum(t, np.broadcast_to(g, t.shape))

    return _make(np.asarray(t.data.sum()), (t,), back)


# ---------------------------------------------------------------------------
# norms

def l1_norm(v: Tensor) -> Tensor:
    def back(g):
        # subgradient at 0 is 0 (np.sign(0) == 0)
        _accum(v, g * np.sign(v.data))

    return _make(np.asarray(np.abs(v.data).sum()), (v,), back)


def l2_norm(v: Tensor) -> Tensor:
    norm = float(np.sqrt((v.data * v.data).sum()))

    def back(g):
        if norm == 0.0:
            return
        _accum(v, g * (v.data / norm))

    return _make(np.asarray(norm), (v,), back)


def rowwise_norm(m: Tensor, kind: str) -> Tensor:
    """Per-row L1 or L2 norm: (p, q) -> (p,). Used for batched scoring."""
    if m.data.ndim != 2:
        raise ShapeError(f"rowwise_norm: needs a matrix, got shape {m.shape}")
    if kind == "l1":
        val = np.abs(m.data).sum(axis=1)

        def back(g):
            _accum(m, g[:, None] * np.sign(m.data))

    elif kind == "l2":
        val = np.sqrt((m.data * m.data).sum(axis=1))

        def back(g):
            safe = np.where(val == 0.0, 1.0, val)
            _accum(m, (g / safe)[:, None] * m.data * (val != 0.0)[:, None])

    else:
        raise DomainError(f"rowwise_norm: unknown kind {kind!r}")
    return _make(val, (m,), back)


# ---------------------------------------------------------------------------
# nonlinearities

def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    s = float(slope)
    pos = t.data > 0.0

    def back(g):
        _accum(t, g * np.where(pos, 1.0, s))

    return _make(np.where(pos, t.data, s * t.data), (t,), back)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    z = np.exp(-np.abs(x))  # overflow-free in both tails
    val = np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))

    def back(g):
        _accum(t, g * val * (1.0 - val))

    return _make(val, (t,), back)


def tanh(t: Tensor) -> Tensor:
    val = np.tanh(t.data)

    def back(g):
        _accum(t, g * (1.0 - val * val))

    return _make(val, (t,), back)


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0.0):
        raise DomainError(f"log of non-positive input (min {t.data.min()})")

    def back(g):
        _accum(t, g / t.data)

    return _make(np.log(t.data), (t,), back)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    inside = (t.data >= lo) & (t.data <= hi)

    def back(g):
        _accum(t, g * inside)

    return _make(np.clip(t.data, lo, hi), (t,), back)


def softmax_over_group(logits: Tensor) -> Tensor:
    """Softmax over one variable-length group of logits (max-stabilized)."""
    if logits.data.ndim != 1:
        raise ShapeError(f"softmax_over_group: needs a vector, got shape {logits.shape}")
    shifted = logits.data - logits.data.max()
    e = np.exp(shifted)
    val = e / e.sum()

    def back(g):
        _accum(logits, val * (g - (g * val).sum()))

    return _make(val, (logits,), back)
