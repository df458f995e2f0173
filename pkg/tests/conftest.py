import numpy as np
import pytest

from crimepath.features import FactorKind, FeatureTaxonomy, RegionProfile
from crimepath.hin import HIN, FactorBinNode

# Three regions' facility counts over (elementary school, high school, zoo, pool).
# Educational and recreational facilities form two subcategories of two features each.
FACILITIES = {
    "r1": np.array([2.0, 2.0, 5.0, 5.0]),
    "r2": np.array([2.0, 2.0, 0.0, 10.0]),
    "r3": np.array([0.0, 0.0, 5.0, 5.0]),
}
FACILITY_SIZES = [2, 2]


@pytest.fixture
def facilities():
    return {k: v.copy() for k, v in FACILITIES.items()}


@pytest.fixture
def urban_taxonomy():
    return FeatureTaxonomy.single(FactorKind.URBANIZATION, {
        "educational": ["Elementary School", "High School"],
        "recreational": ["Zoo", "Pool"],
    })


@pytest.fixture
def facility_profiles():
    return [RegionProfile(r, {FactorKind.URBANIZATION: v.copy()}, (0.0, 0.0)) for r, v in FACILITIES.items()]


@pytest.fixture
def facility_hin():
    node = FactorBinNode(FactorKind.URBANIZATION, "urbanization:all", frozenset(FACILITIES))
    return HIN(list(FACILITIES), {FactorKind.URBANIZATION: [node]})


def random_hin(rng, n_regions, kinds=(FactorKind.INCOME, FactorKind.JOB, FactorKind.GEOGRAPHIC)):
    """Random partition bins for count kinds, random adjacency links for Geographic."""
    regions = [f"x{k}" for k in range(n_regions)]
    bins = {}
    for kind in kinds:
        if kind is FactorKind.GEOGRAPHIC:
            nodes = []
            for i in range(n_regions):
                for j in range(i + 1, n_regions):
                    if rng.random() < 0.25:
                        nodes.append(FactorBinNode(kind, f"geo:{regions[i]}|{regions[j]}",
                                                   frozenset((regions[i], regions[j]))))
        else:
            n_bins = int(rng.integers(1, 5))
            label = rng.integers(-1, n_bins, size=n_regions)  # -1: region left unbinned
            nodes = [FactorBinNode(kind, f"{kind.value.lower()}:b{b}",
                                   frozenset(r for r, lab in zip(regions, label) if lab == b))
                     for b in range(n_bins) if (label == b).any()]
        bins[kind] = sorted(nodes)
    return HIN(regions, bins)


SMALL_MODEL = dict(window=7, state_dim=16, n_layers=2, instance_dim=16, attention_dim=16, top_k=None)


@pytest.fixture(scope="session")
def tiny_city():
    from crimepath.dataset import build_graph
    from crimepath.synthetic import PlantedConfig, generate
    from crimepath.training import ModelConfig, prepare

    city = generate(PlantedConfig(n_regions=8, n_days=60, seed=3))
    graph = build_graph(city.dataset)
    cfg = ModelConfig(**{**SMALL_MODEL, "state_dim": 6, "instance_dim": 6, "attention_dim": 6})
    prepared = prepare(city.dataset, graph, cfg, first_target_day=1)
    return city, graph, cfg, prepared


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
