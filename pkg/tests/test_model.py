import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from propval import autodiff as ad
from propval.autodiff import Tape, Tensor
from propval.model import (
    GcnUnit,
    LstmUnit,
    MlpHead,
    SubgraphEdges,
    adjacency_from_omega,
    gcn_forward,
    lstm_step,
    normalize_adjacency,
    predict_prices,
)


def dense_normalize(A):
    a = A + np.eye(len(A))
    d = a.sum(axis=1)
    return a / np.sqrt(d)[:, None] / np.sqrt(d)[None, :]


def random_graph(rng, n, p=0.3):
    w = np.triu(rng.random((n, n)) * (rng.random((n, n)) < p), 1)
    return w + w.T


def test_normalize_examples():
    assert normalize_adjacency(sp.csr_matrix((1, 1))).toarray().tolist() == [[1.0]]
    np.testing.assert_allclose(normalize_adjacency(np.array([[0, 1.0], [1.0, 0]])).toarray(), np.full((2, 2), 0.5))
    A = random_graph(np.random.default_rng(0), 20)
    np.testing.assert_allclose(normalize_adjacency(A).toarray(), dense_normalize(A), atol=1e-12, rtol=0)


def test_normalize_rejects_negative():
    with pytest.raises(ValueError, match="negative"):
        normalize_adjacency(np.array([[0, -1.0], [-1.0, 0]]))


def test_isolated_nodes_give_unit_self_loops():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = 2.0
    N = normalize_adjacency(A).toarray()
    assert N[2, 2] == 1.0 and N[3, 3] == 1.0 and N[2].sum() == 1.0


def edges_of(A, rng, m=3):
    r, c = np.nonzero(A)
    feats = rng.random((len(r), m))
    # symmetric features so the weighted graph stays symmetric
    key = {}
    for e, (i, j) in enumerate(zip(r, c)):
        key.setdefault((min(i, j), max(i, j)), feats[e])
    feats = np.array([key[(min(i, j), max(i, j))] for i, j in zip(r, c)]).reshape(len(r), m)
    return SubgraphEdges(len(A), r, c, feats)


def test_adjacency_from_omega_matches_dense_normalization():
    rng = np.random.default_rng(1)
    A = random_graph(rng, 12)
    edges = edges_of(A, rng)
    w = np.array([0.2, 0.5, 0.3])
    adj = adjacency_from_omega(edges, Tensor(w))
    np.testing.assert_allclose(adj.matrix().toarray(), dense_normalize(edges.weights(w).toarray()), atol=1e-12)


def test_gcn_identity_and_zero_weights():
    unit = GcnUnit(3, 3, 3)
    unit.load([np.eye(3), np.eye(3)])
    h0 = np.abs(np.random.default_rng(2).normal(size=(4, 3)))
    eye = sp.identity(4, format="csr")
    np.testing.assert_array_equal(gcn_forward(unit, eye, h0).data, h0)
    unit.load([np.zeros((3, 3)), np.zeros((3, 3))])
    assert not gcn_forward(unit, eye, h0).data.any()


def test_gcn_five_node_naive_oracle():
    rng = np.random.default_rng(3)
    A = random_graph(rng, 5, p=0.6)
    N = dense_normalize(A)
    unit = GcnUnit(4, 6, 2, rng)
    h0 = rng.normal(size=(5, 4))
    W0, W1 = unit.W[0].data, unit.W[1].data
    oracle = np.zeros((5, 2))
    hid = np.zeros((5, 6))
    for i in range(5):
        for k in range(6):
            hid[i, k] = max(0.0, sum(N[i, j] * h0[j, a] * W0[a, k] for j in range(5) for a in range(4)))
    for i in range(5):
        for k in range(2):
            oracle[i, k] = max(0.0, sum(N[i, j] * hid[j, a] * W1[a, k] for j in range(5) for a in range(6)))
    np.testing.assert_allclose(gcn_forward(unit, normalize_adjacency(A), h0).data, oracle, atol=1e-12, rtol=0)
    # the fused differentiable path agrees with the constant-matrix path
    edges = edges_of(A, rng, m=1)
    edges.features[:] = A[edges.rows, edges.cols][:, None]
    fused = gcn_forward(unit, adjacency_from_omega(edges, Tensor([1.0])), h0).data
    np.testing.assert_allclose(fused, oracle, atol=1e-12, rtol=0)


def test_gcn_row_mismatch():
    with pytest.raises(ad.ShapeError):
        gcn_forward(GcnUnit(3, 3, 3), sp.identity(4, format="csr"), np.zeros((5, 3)))


def test_lstm_zero_everything_gives_zero():
    unit = LstmUnit(3, 4, forget_bias=0.0)
    unit.bp.data[:] = 0.0
    out, (h, c) = lstm_step(unit, np.zeros((2, 3)))
    assert not out.data.any() and not h.data.any() and not c.data.any()


def test_lstm_saturated_forget_gate_carries_cell():
    rng = np.random.default_rng(4)
    unit = LstmUnit(3, 4, rng)
    k = 4
    unit.b.data[:] = 0.0
    unit.b.data[:k] = -50.0           # input gate shut
    unit.b.data[k:2 * k] = 50.0       # forget gate open
    c0 = rng.normal(size=(2, k))
    _, (_, c1) = lstm_step(unit, rng.normal(size=(2, 3)) * 0.01, (np.zeros((2, k)), c0))
    np.testing.assert_allclose(c1.data, c0, atol=1e-9, rtol=0)


def test_lstm_cell_equation_oracle():
    rng = np.random.default_rng(5)
    unit = LstmUnit(3, 2, rng)
    unit.b.data[:] = rng.normal(size=8)
    x, h, c = rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    out, (h1, c1) = lstm_step(unit, x, (h, c))

    def sig(z):
        return 1 / (1 + np.exp(-z))

    z = x @ unit.Wx.data + h @ unit.Wh.data + unit.b.data
    i, f, g, o = sig(z[:, 0:2]), sig(z[:, 2:4]), np.tanh(z[:, 4:6]), sig(z[:, 6:8])
    c_ref = f * c + i * g
    h_ref = o * np.tanh(c_ref)
    np.testing.assert_allclose(c1.data, c_ref, atol=1e-12, rtol=0)
    np.testing.assert_allclose(h1.data, h_ref, atol=1e-12, rtol=0)
    np.testing.assert_allclose(out.data, h_ref @ unit.Wp.data + unit.bp.data, atol=1e-12, rtol=0)
    assert out.shape[1] == 3  # hand-off width equals the GCN input width


def test_lstm_state_shape_error():
    with pytest.raises(ad.ShapeError, match="state"):
        lstm_step(LstmUnit(3, 2), np.zeros((4, 3)), (np.zeros((4, 3)), np.zeros((4, 2))))


def test_head_examples():
    head = MlpHead(2, 3, out_bias=0.25)
    for p in (head.W1, head.b1, head.W2):
        p.data[...] = 0.0
    assert np.all(predict_prices(head, np.ones((4, 2))).data == 0.25)
    head.W1.data[...] = [[1.0, -1.0, 0.5], [2.0, 0.0, -1.0]]
    head.b1.data[...] = [0.0, 1.0, 0.5]
    head.W2.data[...] = [1.0, 2.0, -1.0]
    H = np.array([[1.0, 1.0], [0.0, -1.0], [1.0, 1.0]])
    # row 0: hidden relu([3, 0, 0]) -> 3 + 0.25; row 1: relu([-2, 1, 1.5]) -> 2 - 1.5 + 0.25
    np.testing.assert_allclose(predict_prices(head, H).data, [3.25, 0.75, 3.25], atol=1e-15)


def test_end_to_end_gradient_including_omega():
    rng = np.random.default_rng(6)
    A = random_graph(rng, 8, p=0.5)
    edges = edges_of(A, rng, m=3)
    logits = Tensor(rng.normal(size=3), requires_grad=True, name="omega")
    gcn = GcnUnit(4, 5, 4, rng, static_dim=0)
    lstm = LstmUnit(4, 3, rng, static_dim=4)
    head = MlpHead(4, 5, rng, out_bias=0.5)
    X = rng.normal(size=(8, 4))
    y = rng.random(5)
    idx = np.array([0, 2, 3, 5, 7])

    def f():
        adj = adjacency_from_omega(edges, ad.softmax(logits))
        h = gcn_forward(gcn, adj, X)
        h, _ = lstm_step(lstm, h, static=X)
        pred = predict_prices(head, ad.gather(h, idx))
        return ad.sqrt(ad.mean(ad.square(ad.sub(pred, y))))

    params = [logits] + gcn.params() + lstm.params() + head.params()
    with Tape() as tape:
        tape.backward(f())
    checked = 0
    for p in params:
        for k in rng.choice(p.size, size=min(p.size, 8), replace=False):
            flat = p.data.reshape(-1)
            old = flat[k]
            flat[k] = old + 1e-5
            up = f().item()
            flat[k] = old - 1e-5
            down = f().item()
            flat[k] = old
            num = (up - down) / 2e-5
            ana = p.grad.reshape(-1)[k]
            assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana)) or abs(num - ana) < 1e-8
            checked += 1
    assert checked >= 60


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n = 7
    A = random_graph(rng, n, p=0.5)
    gcn = GcnUnit(3, 4, 3, rng)
    lstm = LstmUnit(3, 2, rng, static_dim=3)
    head = MlpHead(3, 4, rng)
    X = rng.normal(size=(n, 3))
    perm = rng.permutation(n)

    def run(A_, X_):
        h = gcn_forward(gcn, normalize_adjacency(A_), X_)
        h, _ = lstm_step(lstm, h, static=X_)
        return h.data, predict_prices(head, h).data

    h, y = run(A, X)
    hp, yp = run(A[np.ix_(perm, perm)], X[perm])
    np.testing.assert_allclose(hp, h[perm], atol=1e-12, rtol=0)
    np.testing.assert_allclose(yp, y[perm], atol=1e-12, rtol=0)


def test_duplicate_embedding_rows_identical_predictions():
    head = MlpHead(3, 4, np.random.default_rng(7))
    H = np.tile(np.random.default_rng(8).normal(size=(1, 3)), (3, 1))
    p = predict_prices(head, H).data
    assert p[0] == p[1] == p[2]
