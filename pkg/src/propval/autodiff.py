"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed while a :class:`Tape` is active are recorded in order;
:meth:`Tape.backward` walks the record in reverse and accumulates gradients
into every trainable leaf tensor.  Outside a tape the same functions simply
compute forward values, which is what inference uses.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "SparsePattern",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "spmm",
    "sparse_matmul",
    "relu",
    "sigmoid",
    "tanh",
    "sqrt",
    "power",
    "square",
    "softmax",
    "concat_rows",
    "concat_cols",
    "gather",
    "slice_cols",
    "sum",
    "mean",
    "row_norm",
    "gcn_layer",
    "lstm_cell",
]

_local = threading.local()


class ShapeError(ValueError):
    pass


def _current_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array, optionally trainable.

    Trainable tensors created by the user are leaves and own a ``grad``
    buffer of the same shape.  Intermediate results produced under a tape
    carry ``requires_grad=True`` but keep their gradients on the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._leaf = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def copy(self, name: str | None = None) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self._leaf, name=name or self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive operations for one thread of execution."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, inputs, backward))

    def backward(self, out: Tensor) -> None:
        if out.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
        pending: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        for node, inputs, fn in reversed(self.records):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            for t, gi in zip(inputs, fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._leaf:
                    t.grad += gi
                else:
                    key = id(t)
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi


class SparsePattern:
    """Fixed sparsity structure whose values are supplied per call.

    ``rows``/``cols`` fix the coordinate order in which values are passed;
    the CSR layout used for products is derived once here.
    """

    def __init__(self, rows, cols, shape: tuple[int, int]):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ShapeError(f"rows {rows.shape} and cols {cols.shape} differ")
        self.rows, self.cols, self.shape = rows, cols, tuple(shape)
        self.perm = np.lexsort((cols, rows))
        sr, sc = rows[self.perm], cols[self.perm]
        if len(sr) > 1 and np.any((sr[1:] == sr[:-1]) & (sc[1:] == sc[:-1])):
            raise ValueError("duplicate coordinates in sparse pattern")
        self.indices = sc.astype(np.int32)
        self.indptr = np.concatenate(
            [[0], np.cumsum(np.bincount(sr, minlength=shape[0]))]
        ).astype(np.int32)

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def matrix(self, values: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.asarray(values)[self.perm], self.indices, self.indptr), shape=self.shape
        )


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._leaf = False
    out.requires_grad = False
    if any(t.requires_grad for t in inputs):
        tape = _current_tape()
        if tape is not None:
            out.requires_grad = True
            tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Dense product of 2-D operands; a 1-D right operand is a column vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward)


def spmm(pattern: SparsePattern, values, x) -> Tensor:
    """Sparse-times-dense product where the sparse values may be trainable."""
    values, x = as_tensor(values), as_tensor(x)
    if values.shape != (pattern.nnz,):
        raise ShapeError(f"spmm: values shape {values.shape} != ({pattern.nnz},)")
    if x.shape[0] != pattern.shape[1]:
        raise ShapeError(f"spmm: incompatible shapes {pattern.shape} and {x.shape}")
    m = pattern.matrix(values.data)

    def backward(g):
        gx = m.T @ g
        gv = None
        if values.requires_grad:
            gr, xc = g[pattern.rows], x.data[pattern.cols]
            gv = (gr * xc).sum(axis=1) if g.ndim == 2 else gr * xc
        return gv, gx

    return _make(m @ x.data, (values, x), backward)


def sparse_matmul(s: sp.spmatrix, x) -> Tensor:
    """Product of a constant scipy sparse matrix with a dense tensor."""
    x = as_tensor(x)
    if s.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: incompatible shapes {s.shape} and {x.shape}")
    return _make(np.asarray(s @ x.data), (x,), lambda g: (np.asarray(s.T @ g),))


def relu(a) -> Tensor:
    # adjoint at exactly 0 is 0
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _make(out, (a,), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {a.shape}")
    e = np.exp(a.data - a.data.max())
    out = e / e.sum()
    return _make(out, (a,), lambda g: (out * (g - np.dot(g, out)),))


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    tails = {p.shape[1:] for p in parts}
    if len(tails) != 1:
        raise ShapeError(f"concat_rows: incompatible shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[k] : bounds[k + 1]] for k in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward)


def concat_cols(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if any(p.ndim != 2 for p in parts) or len({p.shape[0] for p in parts}) != 1:
        raise ShapeError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, bounds[k] : bounds[k + 1]] for k in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


def gather(a, idx) -> Tensor:
    """Select rows (or vector entries) by index; repeated indices are allowed."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def backward(g):
        if a.ndim == 1:
            return (np.bincount(idx, weights=g, minlength=n).astype(np.float64),)
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")

    def backward(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return _make(a.data[:, start:stop], (a,), backward)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), backward)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return _make(
        np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),)
    )


def row_norm(a) -> Tensor:
    """Euclidean norm of every row; the adjoint at a zero row is 0."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"row_norm expects a matrix, got shape {a.shape}")
    out = np.sqrt((a.data * a.data).sum(axis=1))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        coef = np.where(out > 0, g / safe, 0.0)
        return (a.data * coef[:, None],)

    return _make(out, (a,), backward)


# -- fused primitives --------------------------------------------------------
# Same values as the composed elementary ops, but one tape record each; the
# composed forms remain available and are used as references in the tests.


def gcn_layer(pattern: SparsePattern, values, h, W) -> Tensor:
    """relu(M @ h @ W) where M has sparsity ``pattern`` and trainable ``values``."""
    values, h, W = as_tensor(values), as_tensor(h), as_tensor(W)
    if values.shape != (pattern.nnz,):
        raise ShapeError(f"gcn_layer: values shape {values.shape} != ({pattern.nnz},)")
    if h.ndim != 2 or h.shape[0] != pattern.shape[1] or W.ndim != 2 or h.shape[1] != W.shape[0]:
        raise ShapeError(f"gcn_layer: incompatible shapes {pattern.shape}, {h.shape} and {W.shape}")
    m = pattern.matrix(values.data)
    hw = h.data @ W.data
    pre = m @ hw
    mask = pre > 0

    def backward(g):
        gp = g * mask
        g_hw = m.T @ gp
        gv = None
        if values.requires_grad:
            gv = np.einsum("ij,ij->i", gp[pattern.rows], hw[pattern.cols])
        return gv, g_hw @ W.data.T, h.data.T @ g_hw

    return _make(np.where(mask, pre, 0.0), (values, h, W), backward)


def lstm_cell(x, h, c, Wx, Wh, b) -> Tensor:
    """One LSTM step (gate order i, f, g, o); returns ``[h_new | c_new]`` column-stacked."""
    x, h, c, Wx, Wh, b = (as_tensor(t) for t in (x, h, c, Wx, Wh, b))
    k = h.shape[1]
    if Wx.shape != (x.shape[1], 4 * k) or Wh.shape != (k, 4 * k) or b.shape != (4 * k,) or c.shape != h.shape:
        raise ShapeError(
            f"lstm_cell: shapes x{x.shape} h{h.shape} c{c.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape}"
        )
    z = x.data @ Wx.data + h.data @ Wh.data + b.data
    i = 0.5 * (1.0 + np.tanh(0.5 * z[:, :k]))
    f = 0.5 * (1.0 + np.tanh(0.5 * z[:, k : 2 * k]))
    gg = np.tanh(z[:, 2 * k : 3 * k])
    o = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * k :]))
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def backward(g):
        gh, gc = g[:, :k], g[:, k:]
        gct = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                gct * gg * i * (1.0 - i),
                gct * c.data * f * (1.0 - f),
                gct * i * (1.0 - gg * gg),
                gh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        return (
            dz @ Wx.data.T,
            dz @ Wh.data.T,
            gct * f,
            x.data.T @ dz,
            h.data.T @ dz,
            dz.sum(axis=0),
        )

    return _make(np.concatenate([h_new, c_new], axis=1), (x, h, c, Wx, Wh, b), backward)
