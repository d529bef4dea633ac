import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _support import random_houses
from propval.data import FACILITY_CATEGORIES, SyntheticMarketConfig, generate_synthetic_market
from propval.features import RankError, encode_raw, pca_fit_transform, raw_columns

TABLE2_CARDINALITIES = (10, 8, 4, 8, 4, 4, 6, 8)


def test_one_hot_block_for_building_type():
    h = random_houses(np.random.default_rng(0), 1)[0]
    h = type(h)(**{**h.__dict__, "facilities": dict(h.facilities, building_type="DE")})
    raw = encode_raw([h])
    block = raw[0, :10]
    assert block.sum() == 1.0 and block[FACILITY_CATEGORIES["building_type"].index("DE")] == 1.0


def test_identical_houses_identical_rows():
    h = random_houses(np.random.default_rng(1), 1)[0]
    twin = type(h)(**{**h.__dict__, "house_id": "twin"})
    raw = encode_raw([h, twin, random_houses(np.random.default_rng(2), 1)[0]])
    assert np.array_equal(raw[0], raw[1])


def test_raw_width_from_table_cardinalities():
    houses = generate_synthetic_market(SyntheticMarketConfig(n_houses=200, seed=0)).houses
    raw = encode_raw(houses)
    assert tuple(len(v) for v in FACILITY_CATEGORIES.values()) == TABLE2_CARDINALITIES
    assert raw.shape == (200, sum(TABLE2_CARDINALITIES) + 16) == (200, len(raw_columns()))


def test_single_axis_variance_recovered():
    rng = np.random.default_rng(3)
    raw = np.zeros((30, 4))
    raw[:, 0] = rng.normal(size=30)
    am = pca_fit_transform(raw, 1)
    np.testing.assert_allclose(am.components[:, 0], [1, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(am.X[:, 0], raw[:, 0] - raw[:, 0].mean(), atol=1e-12)


def test_full_rank_reconstruction():
    rng = np.random.default_rng(4)
    raw = rng.normal(size=(50, 8))
    am = pca_fit_transform(raw, 8)
    np.testing.assert_allclose(am.reconstruct(), raw - raw.mean(axis=0), atol=1e-6)


def test_explained_variance_against_svd_oracle():
    rng = np.random.default_rng(5)
    raw = rng.normal(size=(200, 40))
    am = pca_fit_transform(raw, 10)
    # independent oracle: singular values of the centered data
    s = np.linalg.svd(raw - raw.mean(axis=0), compute_uv=False)
    oracle = s**2 / (raw.shape[0] - 1)
    assert abs(am.explained_variance.sum() - oracle[:10].sum()) < 1e-8
    assert np.all(np.diff(am.explained_variance) <= 1e-12)


def test_rank_error_names_rank():
    raw = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
    with pytest.raises(RankError, match="rank 1"):
        pca_fit_transform(raw, 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(8, 40), w=st.integers(2, 8))
def test_pca_properties(seed, n, w):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n, w))
    D = min(w, 3)
    am = pca_fit_transform(raw, D)
    np.testing.assert_allclose(am.components.T @ am.components, np.eye(D), atol=1e-8)
    lead = np.argmax(np.abs(am.components), axis=0)
    assert np.all(am.components[lead, np.arange(D)] > 0)
    again = pca_fit_transform(raw.copy(), D)
    assert am.X.tobytes() == again.X.tobytes()
    # projection is linear on centered inputs
    x, y = rng.normal(size=w), rng.normal(size=w)
    lhs = (x + y) @ am.components
    np.testing.assert_allclose(lhs, x @ am.components + y @ am.components, atol=1e-9)
