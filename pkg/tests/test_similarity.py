import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crimepath.features import FactorKind
from crimepath.hin import HIN, FactorBinNode
from crimepath.similarity import (
    SimilarityMatrix,
    classic_pathsim,
    dist_aware_matrix,
    dist_aware_pathsim,
    geographic_similarity,
    path_count,
    similarity_matrix,
)

from conftest import FACILITY_SIZES


def test_path_count_facilities(facilities):
    # 2*2 + 2*2 + 5*0 + 5*10
    assert path_count(facilities["r1"], facilities["r2"]) == 58


def test_path_count_zero_vector(facilities):
    assert path_count(facilities["r1"], np.zeros(4)) == 0


@given(st.lists(st.integers(0, 50), min_size=1, max_size=12), st.data())
def test_path_count_matches_loop(a, data):
    b = data.draw(st.lists(st.integers(0, 50), min_size=len(a), max_size=len(a)))
    expected = 0
    for x, y in zip(a, b):
        expected += x * y
    assert path_count(a, b) == expected


def test_classic_golden(facilities):
    assert classic_pathsim(facilities["r1"], facilities["r2"]) == pytest.approx(0.699, abs=1e-3)
    assert classic_pathsim(facilities["r1"], facilities["r3"]) == pytest.approx(0.926, abs=1e-3)


def test_classic_identical_is_one(facilities):
    assert classic_pathsim(facilities["r2"], facilities["r2"]) == pytest.approx(1.0)


def test_classic_both_empty_is_zero():
    assert classic_pathsim(np.zeros(3), np.zeros(3)) == 0.0


def test_dist_aware_golden(facilities, urban_taxonomy):
    assert dist_aware_pathsim(facilities["r1"], facilities["r2"], FACILITY_SIZES) == pytest.approx(0.833, abs=1e-3)
    assert dist_aware_pathsim(facilities["r1"], facilities["r3"], FACILITY_SIZES) == pytest.approx(0.5, abs=1e-3)
    # the taxonomy form gives the same numbers
    assert dist_aware_pathsim(facilities["r1"], facilities["r2"], urban_taxonomy) == pytest.approx(0.833, abs=1e-3)


def test_ranking_reversal(facilities):
    da = lambda a, b: dist_aware_pathsim(facilities[a], facilities[b], FACILITY_SIZES)
    cl = lambda a, b: classic_pathsim(facilities[a], facilities[b])
    assert da("r1", "r2") > da("r1", "r3")
    assert cl("r1", "r3") > cl("r1", "r2")


def test_single_subcategory_reduces_to_classic(facilities):
    for a, b in [("r1", "r2"), ("r1", "r3"), ("r2", "r3")]:
        assert dist_aware_pathsim(facilities[a], facilities[b], [4]) == pytest.approx(classic_pathsim(facilities[a], facilities[b]))


def test_empty_subcategory_contributes_zero(facilities):
    # r3 has no educational facilities and neither does a copy of it
    assert dist_aware_pathsim(facilities["r3"], facilities["r3"], FACILITY_SIZES) == pytest.approx(0.5)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        dist_aware_pathsim([1, 2], [1, 2, 3], [1, 1])
    with pytest.raises(ValueError):
        dist_aware_pathsim([1, 2, 3], [1, 2, 3], [1, 1])


def _random_case(rng):
    sizes = list(rng.integers(1, 5, size=rng.integers(1, 5)))
    n = sum(sizes)
    a = rng.integers(0, 20, size=n).astype(float)
    b = rng.integers(0, 20, size=n).astype(float)
    return sizes, a, b


def test_properties_random():
    rng = np.random.default_rng(3)
    for _ in range(300):
        sizes, a, b = _random_case(rng)
        s = dist_aware_pathsim(a, b, sizes)
        assert s == dist_aware_pathsim(b, a, sizes)
        assert 0.0 <= s <= 1.0
        full = rng.integers(1, 20, size=a.size).astype(float)
        assert dist_aware_pathsim(full, full, sizes) == pytest.approx(1.0, abs=1e-12)
        z = int(rng.integers(len(sizes)))
        k = float(rng.uniform(0.1, 50))
        start = sum(sizes[:z])
        a2, b2 = a.copy(), b.copy()
        a2[start : start + sizes[z]] *= k
        b2[start : start + sizes[z]] *= k
        assert abs(dist_aware_pathsim(a2, b2, sizes) - s) < 1e-9


def test_matrix_matches_pairwise():
    rng = np.random.default_rng(5)
    sizes = [3, 1, 2]
    counts = rng.integers(0, 9, size=(10, 6)).astype(float)
    m = dist_aware_matrix(counts, sizes)
    for i in range(10):
        for j in range(10):
            assert m[i, j] == pytest.approx(dist_aware_pathsim(counts[i], counts[j], sizes), abs=1e-12)


def test_similarity_matrix_facilities(facility_profiles, urban_taxonomy, facility_hin):
    sm = similarity_matrix(facility_profiles, FactorKind.URBANIZATION, urban_taxonomy, facility_hin)
    assert sm["r1", "r2"] == pytest.approx(0.833, abs=1e-3)
    assert sm["r1", "r3"] == pytest.approx(0.5, abs=1e-3)
    # r2 vs r3: only the recreational block overlaps, 1/2 * 2*50/(100+50)
    assert sm["r2", "r3"] == pytest.approx(1 / 3, abs=1e-9)
    np.testing.assert_array_equal(sm.values, sm.values.T)


def test_similarity_matrix_disconnected_pair(facility_profiles, urban_taxonomy):
    bins = [
        FactorBinNode(FactorKind.URBANIZATION, "u:a", frozenset({"r1", "r2"})),
        FactorBinNode(FactorKind.URBANIZATION, "u:b", frozenset({"r3"})),
    ]
    hin = HIN(["r1", "r2", "r3"], {FactorKind.URBANIZATION: bins})
    sm = similarity_matrix(facility_profiles, FactorKind.URBANIZATION, urban_taxonomy, hin)
    assert sm["r1", "r3"] == 0.0
    assert sm["r1", "r2"] == pytest.approx(0.833, abs=1e-3)


def test_similarity_matrix_csv_round_trip(facility_profiles, urban_taxonomy, facility_hin):
    sm = similarity_matrix(facility_profiles, FactorKind.URBANIZATION, urban_taxonomy, facility_hin)
    back = SimilarityMatrix.from_csv(FactorKind.URBANIZATION, sm.to_csv())
    assert back.regions == sm.regions
    np.testing.assert_array_equal(back.values, sm.values)


def test_geographic_similarity_kernel():
    dist = np.array([[0.0, 1.0, 4.0], [1.0, 0.0, 3.0], [4.0, 3.0, 0.0]])
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
    sim = geographic_similarity(dist, adj)
    sigma = 2.0  # median of adjacent distances {1, 3}
    assert sim[0, 1] == pytest.approx(np.exp(-1 / sigma))
    assert sim[1, 2] == pytest.approx(np.exp(-3 / sigma))
    assert sim[0, 2] == 0.0
    np.testing.assert_array_equal(np.diag(sim), 1.0)


@settings(max_examples=60)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_matrix_symmetric_and_bounded(n, seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 5, size=(n, 5)).astype(float)
    m = dist_aware_matrix(counts, [2, 3])
    np.testing.assert_array_equal(m, m.T)
    assert (m >= 0).all() and (m <= 1).all()
