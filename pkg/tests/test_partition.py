from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from propval.data import SyntheticMarketConfig, generate_synthetic_market
from propval.partition import (
    MissingEmbeddingError,
    SubgraphPartition,
    overlap_embedding_rows,
    partition_overlapping,
)
from propval.pipeline import BuildConfig, build_market


def toy_market(n, n_comm, rng):
    comm = np.sort(rng.integers(0, n_comm, size=n))
    pairs = [(f"M{c // 5}", f"C{c:02d}") for c in comm]
    dense = rng.random((n, n))
    A = sp.csr_matrix(np.triu(dense, 1) + np.triu(dense, 1).T)
    return A, pairs


def test_single_subgraph_when_target_covers_all():
    A, pairs = toy_market(100, 10, np.random.default_rng(0))
    p = partition_overlapping(A, pairs, target_size=100)
    assert p.j == 1 and p.overlap == {}


def test_two_subgraphs_union_and_multiplicity():
    A, pairs = toy_market(100, 10, np.random.default_rng(1))
    p = partition_overlapping(A, pairs, target_size=60, overlap_fraction=0.05)
    assert p.j == 2
    assert set(np.concatenate(p.subgraphs).tolist()) == set(range(100))
    assert p.overlap and all(len(v) == 2 for v in p.overlap.values())


def test_overlap_fraction_out_of_range():
    A, pairs = toy_market(10, 2, np.random.default_rng(2))
    for bad in (0.0, 0.5, -1.0):
        with pytest.raises(ValueError, match="overlap_fraction"):
            partition_overlapping(A, pairs, overlap_fraction=bad)


def test_default_market_overlap_census():
    houses = generate_synthetic_market(SyntheticMarketConfig(seed=0)).houses
    p = build_market(houses, BuildConfig()).partition
    frac = len(p.overlap) / p.n_houses
    assert 0.02 <= frac <= 0.10
    assert all(len(v) >= 2 for v in p.overlap.values())


def test_overlap_rows_examples():
    p = SubgraphPartition((np.array([0, 1, 2]), np.array([2, 3])), 4, np.array([0, 0, 0, 1]))
    rows = overlap_embedding_rows(p, [np.arange(6.0).reshape(3, 2), np.array([[9.0, 9.0], [7.0, 7.0]])])
    assert list(rows) == [2]
    assert [i for i, _ in rows[2]] == [0, 1]
    np.testing.assert_array_equal(rows[2][0][1], [4.0, 5.0])
    np.testing.assert_array_equal(rows[2][1][1], [9.0, 9.0])
    single = SubgraphPartition((np.array([0, 1]),), 2, np.zeros(2, dtype=np.int64))
    assert overlap_embedding_rows(single, [np.zeros((2, 3))]) == {}
    with pytest.raises(MissingEmbeddingError):
        overlap_embedding_rows(p, [np.zeros((3, 2)), None])


def test_manifest_roundtrip(tmp_path):
    A, pairs = toy_market(80, 8, np.random.default_rng(3))
    p = partition_overlapping(A, pairs, target_size=30)
    p.save(tmp_path / "part.json")
    q = SubgraphPartition.load(tmp_path / "part.json")
    assert q.manifest_hash() == p.manifest_hash()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(20, 120), target=st.integers(8, 60),
       frac=st.floats(0.01, 0.45), mode=st.sampled_from(["similarity", "geographic"]))
def test_coverage_and_registry_census(seed, n, target, frac, mode):
    rng = np.random.default_rng(seed)
    A, pairs = toy_market(n, 12, rng)
    p = partition_overlapping(A, pairs, target_size=target, overlap_fraction=frac, mode=mode)
    assert set(np.concatenate(p.subgraphs).tolist()) == set(range(n))
    g = p.multiplicity()
    for h, subs in p.overlap.items():
        assert len(subs) == g[h] >= 2
        assert all(h in set(p.subgraphs[i].tolist()) for i in subs)
    for i in range(p.j):
        Ai = p.sub_adjacency(A, i)
        assert (Ai != Ai.T).nnz == 0
    emb = [rng.normal(size=(len(s), 3)) for s in p.subgraphs]
    rows = overlap_embedding_rows(p, emb)
    census = Counter(i for v in rows.values() for i, _ in v)
    expected = Counter(i for subs in p.overlap.values() for i in subs)
    assert census == expected
