import numpy as np
import pytest

from crimepath.features import (
    FactorKind,
    FeatureTaxonomy,
    RegionProfile,
    dump_taxonomy,
    load_taxonomy,
    profiles_from_csv,
    profiles_to_csv,
    validate_profiles,
)


def _complete(taxonomy, rid="a"):
    vectors = {k: np.arange(taxonomy.n_features(k), dtype=float) for k in taxonomy.kinds}
    return RegionProfile(rid, vectors, (40.7, -74.0))


def test_default_taxonomy_layout():
    tax = load_taxonomy()
    assert tax.kinds == [FactorKind.ETHNICS, FactorKind.INCOME, FactorKind.JOB,
                         FactorKind.COMMUTING, FactorKind.URBANIZATION]
    assert tax.n_features(FactorKind.URBANIZATION) == 13
    assert sum(tax.subcategory_sizes(FactorKind.JOB)) == tax.n_features(FactorKind.JOB)


def test_taxonomy_yaml_round_trip(tmp_path):
    tax = load_taxonomy()
    path = tmp_path / "t.yaml"
    path.write_text(dump_taxonomy(tax))
    assert load_taxonomy(path) == tax


def test_taxonomy_rejects_overlap_and_empty():
    with pytest.raises(ValueError):
        FeatureTaxonomy.from_dict({"Job": {"a": ["x", "y"], "b": ["y"]}})
    with pytest.raises(ValueError):
        FeatureTaxonomy.from_dict({"Job": {"a": []}})
    with pytest.raises(ValueError):
        FeatureTaxonomy.from_dict({"Geographic": {"a": ["x"]}})


def test_factor_kind_parse():
    assert FactorKind.parse("RIR") is FactorKind.INCOME
    assert FactorKind.parse("Income") is FactorKind.INCOME
    assert FactorKind.parse("INCOME") is FactorKind.INCOME
    with pytest.raises(ValueError):
        FactorKind.parse("Weather")


def test_validate_clean_profiles():
    tax = load_taxonomy()
    assert validate_profiles([_complete(tax, "a"), _complete(tax, "b")], tax) == []


def test_validate_negative_poi_count():
    tax = load_taxonomy()
    p = _complete(tax)
    p.vectors[FactorKind.URBANIZATION][2] = -1
    report = validate_profiles([p], tax)
    assert len(report) == 1 and report[0].kind is FactorKind.URBANIZATION


def test_validate_missing_and_malformed():
    tax = load_taxonomy()
    p = _complete(tax)
    del p.vectors[FactorKind.INCOME]
    p.vectors[FactorKind.JOB] = np.array([1.0])
    p.vectors[FactorKind.ETHNICS][0] = np.nan
    reasons = {v.kind: v.reason for v in validate_profiles([p], tax)}
    assert reasons[FactorKind.INCOME] == "missing vector"
    assert reasons[FactorKind.JOB].startswith("length")
    assert reasons[FactorKind.ETHNICS] == "non-finite value"
    assert len(reasons) == 3


def test_profiles_csv_round_trip():
    tax = load_taxonomy()
    rng = np.random.default_rng(0)
    profiles = []
    for k in range(3):
        p = _complete(tax, f"r{k}")
        p.vectors = {kind: rng.uniform(0, 100, size=v.size) for kind, v in p.vectors.items()}
        profiles.append(p)
    back = profiles_from_csv(profiles_to_csv(profiles, tax), tax)
    for a, b in zip(profiles, back):
        assert a.region_id == b.region_id and a.centroid == b.centroid
        for kind in tax.kinds:
            np.testing.assert_array_equal(a.vectors[kind], b.vectors[kind])
