import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _support import conjunction_counts, dfs_counts, random_houses
from propval.data import SyntheticMarketConfig, generate_synthetic_market
from propval.hin import (
    MetaSchemaConfig,
    MetaStructureError,
    SimilarityStack,
    build_hin,
    compose_adjacency,
    count_meta_graph,
    count_meta_path,
    count_meta_structure,
    enumerate_meta_structures,
    load_meta_structures,
    meta_graph,
    meta_path,
    save_meta_structures,
    similarity,
)


def test_two_houses_one_community():
    houses = random_houses(np.random.default_rng(0), 2, n_muni=1, comm_per=1, fsa_per=1, postal_per=2)
    houses[1] = type(houses[1])(**{**houses[1].__dict__, "postal": "Px", "fsa": houses[0].fsa})
    houses[0] = type(houses[0])(**{**houses[0].__dict__, "postal": "Py"})
    g = build_hin(houses)
    assert g.node_count("H") == 2 and g.node_count("P") == 2 and g.node_count("C") >= 1


def test_one_house_edge_census():
    g = build_hin(random_houses(np.random.default_rng(1), 1))
    fac_edges = sum(g.edge_count("H", sym) for sym in ("BT", "LS", "GT", "EW", "PT", "HS", "HE", "BS"))
    assert fac_edges == 8
    assert g.edge_count("H", "P") == 1


def test_hundred_house_node_count_matches_generator():
    cfg = SyntheticMarketConfig(n_houses=100, seed=5)
    houses = generate_synthetic_market(cfg).houses
    g = build_hin(houses)
    used_geo = sum(len({getattr(h, f) for h in houses}) for f in ("postal", "fsa", "community", "municipality"))
    geo_cap = cfg.n_postals + cfg.n_fsas + cfg.n_communities + cfg.n_municipalities
    assert used_geo <= geo_cap
    fac = sum(len({h.facilities[c] for h in houses}) for c in houses[0].facilities)
    assert g.node_count() == 100 + used_geo + fac


def test_default_enumeration_counts():
    specs = enumerate_meta_structures()
    assert len(specs) == 78
    assert sum(s.kind == "path" for s in specs) == 12
    assert sum(s.kind == "graph" for s in specs) == math.comb(12, 2)
    assert len(enumerate_meta_structures(MetaSchemaConfig(graph_mode="facility-pairs"))) == 12 + math.comb(8, 2)
    none = enumerate_meta_structures(MetaSchemaConfig(graph_mode="none"))
    assert len(none) == 12 and all(s.kind == "path" for s in none)


def test_unknown_node_type_rejected():
    with pytest.raises(MetaStructureError, match="unknown node type"):
        meta_path("H-Q-H")
    with pytest.raises(MetaStructureError):
        enumerate_meta_structures(MetaSchemaConfig(extra_paths=("H-ZZ-H",)))


def test_meta_structure_file_roundtrip(tmp_path):
    specs = enumerate_meta_structures(MetaSchemaConfig(graph_mode="facility-pairs"))
    save_meta_structures(specs, tmp_path / "ms.json")
    assert load_meta_structures(tmp_path / "ms.json") == specs


def test_same_postal_counts():
    houses = random_houses(np.random.default_rng(2), 2, n_muni=1, comm_per=1, fsa_per=1, postal_per=1)
    c = count_meta_path(build_hin(houses), meta_path("H-P-H")).toarray()
    assert c[0, 1] == 1 and c[0, 0] == 1


def test_different_communities_have_no_community_path():
    rng = np.random.default_rng(3)
    houses = random_houses(rng, 2, n_muni=1, comm_per=2, fsa_per=1, postal_per=1)
    houses[0] = type(houses[0])(**{**houses[0].__dict__, "postal": "P0", "fsa": "F0", "community": "C0"})
    houses[1] = type(houses[1])(**{**houses[1].__dict__, "postal": "P1", "fsa": "F1", "community": "C1"})
    c = count_meta_path(build_hin(houses), meta_path("H-P-F-C-F-P-H")).toarray()
    assert c[0, 1] == 0


def test_meta_graph_conjunction_examples():
    houses = random_houses(np.random.default_rng(4), 2)
    a, b = houses
    fac_b = dict(b.facilities, building_type=a.facilities["building_type"], garage=a.facilities["garage"])
    houses[1] = type(b)(**{**b.__dict__, "facilities": fac_b})
    g = build_hin(houses)
    assert count_meta_graph(g, meta_graph(["H-BT-H", "H-GT-H"])).toarray()[0, 1] == 1
    other = next(v for v in ("A", "B", "C", "D") if v != a.facilities["garage"])
    houses[1] = type(b)(**{**b.__dict__, "facilities": dict(fac_b, garage=other)})
    g = build_hin(houses)
    assert count_meta_graph(g, meta_graph(["H-BT-H", "H-GT-H"])).toarray()[0, 1] == 0


def test_counting_oracle_paths_fifty_random_hins():
    specs = [s for s in enumerate_meta_structures() if s.kind == "path"]
    rng = np.random.default_rng(100)
    for _ in range(50):
        n = int(rng.integers(2, 60))
        houses = random_houses(rng, n, n_fac_values=int(rng.integers(1, 4)))
        g = build_hin(houses)
        assert g.node_count() <= 200
        for s in specs:
            np.testing.assert_array_equal(count_meta_path(g, s).toarray(), dfs_counts(houses, s.types))


def test_counting_oracle_graphs_twenty_random_hins():
    specs = [s for s in enumerate_meta_structures() if s.kind == "graph"]
    rng = np.random.default_rng(200)
    for _ in range(20):
        houses = random_houses(rng, int(rng.integers(2, 16)), n_fac_values=2)
        g = build_hin(houses)
        for s in specs:
            oracle = conjunction_counts(houses, [p.types for p in s.constituents])
            np.testing.assert_array_equal(count_meta_graph(g, s).toarray(), oracle)


# -- similarity ---------------------------------------------------------------


def stack_for(houses, specs, omega=None):
    return SimilarityStack.from_hin(build_hin(houses), specs, omega)


def dense_similarity(stack):
    n = stack.n_houses
    S = np.zeros((n, n))
    for m in range(len(stack.specs)):
        C = stack.counts(m).toarray()
        d = np.diag(C)
        den = d[:, None] + d[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            S += stack.omega[m] * np.where(den > 0, 2 * C / den, 0.0)
    return S


def test_single_path_same_community_similarity_one():
    # one postal per community, so the community path has exactly one instance per pair
    houses = random_houses(np.random.default_rng(5), 2, n_muni=1, comm_per=1, fsa_per=1, postal_per=1)
    s = stack_for(houses, [meta_path("H-P-F-C-F-P-H")], [1.0])
    assert s.counts(0).toarray().tolist() == [[1, 1], [1, 1]]
    assert similarity(s, 0, 1) == 1.0


def test_hand_arithmetic_two_paths():
    houses = random_houses(np.random.default_rng(6), 2, n_muni=1, comm_per=1, fsa_per=1, postal_per=1)
    a, b = houses
    fac = dict(b.facilities, building_type=a.facilities["building_type"])
    fac["pool"] = next(v for v in ("AG", "ID", "IG", "NO") if v != a.facilities["pool"])
    houses[1] = type(b)(**{**b.__dict__, "facilities": fac})
    s = stack_for(houses, [meta_path("H-BT-H"), meta_path("H-PT-H")], [0.3, 0.7])
    assert similarity(s, 0, 1) == pytest.approx(0.3, abs=1e-15)


def test_symmetry_diagonal_and_linearity_on_random_market():
    rng = np.random.default_rng(7)
    houses = random_houses(rng, 40)
    specs = enumerate_meta_structures()
    omega = rng.random(len(specs))
    s = stack_for(houses, specs, omega)
    S = s.similarity_block(np.arange(s.n_houses))
    assert np.array_equal(S, S.T)
    for h in range(s.n_houses):
        expected = sum(omega[m] for m in range(len(specs)) if s.diagonal(m)[h] > 0)
        assert abs(S[h, h] - expected) < 1e-12
    np.testing.assert_allclose(S, dense_similarity(s), atol=1e-12, rtol=0)
    for i, j in [(0, 1), (3, 17), (5, 5)]:
        assert abs(similarity(s, i, j) - S[i, j]) < 1e-12


def test_adjacency_linear_in_omega():
    rng = np.random.default_rng(8)
    houses = random_houses(rng, 30)
    specs = enumerate_meta_structures()
    s = stack_for(houses, specs, rng.random(len(specs)))
    A1 = compose_adjacency(s, top_k=5)
    A3 = compose_adjacency(s.with_omega(3.0 * s.omega), top_k=5)
    assert (A1 != 0).toarray().tolist() == (A3 != 0).toarray().tolist()
    np.testing.assert_allclose(A3.toarray(), 3.0 * A1.toarray(), rtol=1e-12, atol=0)


def test_three_identical_houses():
    base = random_houses(np.random.default_rng(9), 1)[0]
    houses = [type(base)(**{**base.__dict__, "house_id": f"x{i}"}) for i in range(3)]
    A = compose_adjacency(stack_for(houses, enumerate_meta_structures()), top_k=2).toarray()
    off = A[~np.eye(3, dtype=bool)]
    assert np.all(off > 0) and np.all(off == off[0])


def test_full_k_matches_pairwise_similarity():
    rng = np.random.default_rng(10)
    houses = random_houses(rng, 12)
    s = stack_for(houses, enumerate_meta_structures())
    A = compose_adjacency(s, top_k=11).toarray()
    S = dense_similarity(s)
    np.fill_diagonal(S, 0.0)
    np.testing.assert_allclose(A, S, atol=1e-12, rtol=0)


def test_top_k_structure_on_fifty_house_market():
    houses = generate_synthetic_market(SyntheticMarketConfig(n_houses=50, seed=1)).houses
    A = compose_adjacency(stack_for(houses, enumerate_meta_structures()), top_k=5)
    assert (A != A.T).nnz == 0
    assert np.all(A.diagonal() == 0)
    assert np.diff(A.indptr).max() <= 10


def test_top_k_must_be_positive():
    s = stack_for(random_houses(np.random.default_rng(0), 3), enumerate_meta_structures())
    with pytest.raises(ValueError, match="top_k"):
        compose_adjacency(s, top_k=0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 25))
def test_count_matrices_symmetric_property(seed, n):
    g = build_hin(random_houses(np.random.default_rng(seed), n))
    for s in enumerate_meta_structures()[:20]:
        c = count_meta_structure(g, s)
        assert (c != c.T).nnz == 0
