"""GCN, LSTM and MLP building blocks of the per-subgraph valuation unit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import SparsePattern, Tensor


def normalize_adjacency(A) -> sp.csr_matrix:
    """Renormalized adjacency D^-1/2 (A + I) D^-1/2 with D the degree of A + I."""
    A = sp.csr_matrix(A, dtype=np.float64)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got {A.shape}")
    if A.nnz and A.data.min() < 0:
        raise ValueError("adjacency has negative entries")
    if (abs(A - A.T) > 1e-12).nnz:
        raise ValueError("adjacency is not symmetric")
    a = A + sp.identity(A.shape[0], format="csr")
    dinv = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
    return sp.csr_matrix(sp.diags(dinv) @ a @ sp.diags(dinv))


@dataclass
class SubgraphEdges:
    """Off-diagonal edges of one subgraph with their per-meta-structure terms.

    ``features @ omega`` gives the edge weights; ``rows``/``cols`` are local
    indices and list both directions of every undirected edge.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    features: np.ndarray  # (n_edges, M)

    def __post_init__(self):
        diag = np.arange(self.n)
        self.pattern = SparsePattern(
            np.concatenate([self.rows, diag]), np.concatenate([self.cols, diag]), (self.n, self.n)
        )
        e = len(self.rows)
        self._row_sum = sp.csr_matrix(
            (np.ones(e), (self.rows, np.arange(e))), shape=(self.n, e)
        )

    def weights(self, omega: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.features @ omega, (self.rows, self.cols)), shape=(self.n, self.n)
        )


@dataclass
class NormalizedAdjacency:
    pattern: SparsePattern
    values: Tensor

    def matrix(self) -> sp.csr_matrix:
        return self.pattern.matrix(self.values.data)


def adjacency_from_omega(edges: SubgraphEdges, omega: Tensor) -> NormalizedAdjacency:
    """Differentiable renormalized adjacency of a subgraph as a function of omega."""
    a = ad.matmul(edges.features, omega)
    deg = ad.add(ad.sparse_matmul(edges._row_sum, a), 1.0)
    dinv = ad.power(deg, -0.5)
    off = ad.mul(ad.mul(a, ad.gather(dinv, edges.rows)), ad.gather(dinv, edges.cols))
    return NormalizedAdjacency(edges.pattern, ad.concat_rows([off, ad.power(deg, -1.0)]))


def propagate(adj, h) -> Tensor:
    if isinstance(adj, NormalizedAdjacency):
        return ad.spmm(adj.pattern, adj.values, h)
    if sp.issparse(adj):
        return ad.sparse_matmul(adj, h)
    return ad.matmul(adj, h)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class GcnUnit:
    """Two propagation layers, ReLU after each.

    With ``static_dim > 0`` the first layer also reads a static side input
    (the house attributes) next to the handed-off embedding.
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator | None = None,
                 prefix: str = "gcn", static_dim: int = 0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.static_dim = in_dim, static_dim
        self.W = [
            Tensor(_glorot(rng, in_dim + static_dim, hidden), requires_grad=True, name=f"{prefix}.W0"),
            Tensor(_glorot(rng, hidden, out_dim), requires_grad=True, name=f"{prefix}.W1"),
        ]

    def params(self) -> list[Tensor]:
        return list(self.W)

    def load(self, arrays) -> None:
        for p, a in zip(self.W, arrays):
            p.data[...] = a


def _with_static(h, static, width: int, static_dim: int, where: str) -> Tensor:
    h = ad.as_tensor(h)
    if h.ndim != 2 or h.shape[1] != width:
        raise ad.ShapeError(f"{where}: input shape {h.shape}, expected (*, {width})")
    if static_dim == 0:
        return h
    if static is None:
        raise ValueError(f"{where}: unit expects a static input of width {static_dim}")
    static = ad.as_tensor(static)
    if static.shape != (h.shape[0], static_dim):
        raise ad.ShapeError(f"{where}: static input shape {static.shape}, expected {(h.shape[0], static_dim)}")
    return ad.concat_cols([h, static])


def gcn_forward(unit: GcnUnit, adj, h0, static=None) -> Tensor:
    n = adj.pattern.shape[0] if isinstance(adj, NormalizedAdjacency) else adj.shape[0]
    if np.shape(ad.as_tensor(h0).data)[0] != n:
        raise ad.ShapeError(f"gcn_forward: {np.shape(ad.as_tensor(h0).data)[0]} input rows for a {n}-node subgraph")
    h = _with_static(h0, static, unit.in_dim, unit.static_dim, "gcn_forward")
    for W in unit.W:
        if isinstance(adj, NormalizedAdjacency):
            h = ad.gcn_layer(adj.pattern, adj.values, h, W)
        else:
            h = ad.relu(ad.matmul(propagate(adj, h), W))
    return h


class LstmUnit:
    """LSTM cell (gate order i, f, g, o) with a projection back to the input width."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None,
                 prefix: str = "lstm", forget_bias: float = 1.0, static_dim: int = 0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.hidden, self.static_dim = in_dim, hidden, static_dim
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = forget_bias
        self.Wx = Tensor(_glorot(rng, in_dim + static_dim, 4 * hidden), requires_grad=True, name=f"{prefix}.Wx")
        self.Wh = Tensor(_glorot(rng, hidden, 4 * hidden), requires_grad=True, name=f"{prefix}.Wh")
        self.b = Tensor(b, requires_grad=True, name=f"{prefix}.b")
        self.Wp = Tensor(_glorot(rng, hidden, in_dim), requires_grad=True, name=f"{prefix}.Wp")
        self.bp = Tensor(np.zeros(in_dim), requires_grad=True, name=f"{prefix}.bp")

    def params(self) -> list[Tensor]:
        return [self.Wx, self.Wh, self.b, self.Wp, self.bp]

    def load(self, arrays) -> None:
        for p, a in zip(self.params(), arrays):
            p.data[...] = a


def lstm_step(unit: LstmUnit, x, state=None, static=None):
    """One cell step for every row; returns (projected output, (h, c)).

    The output has the width of ``x`` so it can seed the next GCN unit.
    """
    x = _with_static(x, static, unit.in_dim, unit.static_dim, "lstm_step")
    n, k = x.shape[0], unit.hidden
    if state is None:
        h = c = Tensor(np.zeros((n, k)))
    else:
        h, c = (ad.as_tensor(s) for s in state)
        if h.shape != (n, k) or c.shape != (n, k):
            raise ad.ShapeError(f"lstm_step: state shapes {h.shape}, {c.shape}, expected {(n, k)}")
    hc = ad.lstm_cell(x, h, c, unit.Wx, unit.Wh, unit.b)
    h_new, c_new = ad.slice_cols(hc, 0, k), ad.slice_cols(hc, k, 2 * k)
    out = ad.add(ad.matmul(h_new, unit.Wp), unit.bp)
    return out, (h_new, c_new)


class MlpHead:
    """Embedding -> ReLU hidden layer -> one normalized price."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None,
                 prefix: str = "head", out_bias: float = 0.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W1 = Tensor(_glorot(rng, in_dim, hidden), requires_grad=True, name=f"{prefix}.W1")
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True, name=f"{prefix}.b1")
        self.W2 = Tensor(_glorot(rng, hidden, 1)[:, 0], requires_grad=True, name=f"{prefix}.W2")
        self.b2 = Tensor(np.array([out_bias]), requires_grad=True, name=f"{prefix}.b2")

    def params(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2]

    def load(self, arrays) -> None:
        for p, a in zip(self.params(), arrays):
            p.data[...] = a


def predict_prices(head: MlpHead, H) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(H, head.W1), head.b1))
    return ad.add(ad.matmul(hidden, head.W2), head.b2)
