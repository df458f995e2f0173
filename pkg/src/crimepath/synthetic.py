"""Seeded synthetic city with crime dynamics planted through the income factor.

Regions are split into income bins. Inside each bin a few *source* regions
carry high-volume crime driven by a bin-level coin flip per day and category;
the remaining *follower* regions record a single crime the next day exactly
when their bin's coin came up (up to a small flip probability). A follower's
own history therefore says nothing about its next day, while its income-bin
peers' current day says almost everything. All other factors are drawn
independently of the income bins.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np

from .dataset import Dataset, dataset_from_parts
from .features import FactorKind, FeatureTaxonomy, RegionProfile, load_taxonomy
from .ingest import DEFAULT_CATEGORIES, CrimeTensor, Period


@dataclass(frozen=True)
class PlantedConfig:
    n_regions: int = 20
    n_days: int = 200
    n_categories: int = 3
    income_bins: int = 3
    sources_per_bin: int = 2
    source_rate: float = 0.35
    source_counts: tuple[int, int] = (3, 7)  # inclusive-exclusive range of a source's count on an active day
    follower_flip: float = 0.02
    box_km: float = 20.0
    adjacency_km: float = 6.0
    start: date = date(2015, 1, 1)
    seed: int = 7


@dataclass
class PlantedCity:
    dataset: Dataset
    income_group: np.ndarray  # (I,) bin index per region
    is_source: np.ndarray  # (I,) bool
    driver: np.ndarray  # (bins, T, C) the planted coin flips


def generate(cfg: PlantedConfig = PlantedConfig(), taxonomy: FeatureTaxonomy | None = None) -> PlantedCity:
    rng = np.random.default_rng(cfg.seed)
    taxonomy = taxonomy or load_taxonomy()
    I, T, C = cfg.n_regions, cfg.n_days, cfg.n_categories
    regions = [f"R{k:02d}" for k in range(I)]

    group = np.array([k % cfg.income_bins for k in rng.permutation(I)])
    is_source = np.zeros(I, dtype=bool)
    for b in range(cfg.income_bins):
        members = np.flatnonzero(group == b)
        is_source[members[: cfg.sources_per_bin]] = True

    # income levels are well separated between bins so quantile binning recovers `group`
    base_income = 30000.0 * (1.6 ** np.arange(cfg.income_bins))
    km_per_deg = 111.32
    lat0, lon0 = 40.7, -73.95
    profiles = []
    for k, rid in enumerate(regions):
        mean = base_income[group[k]] * rng.uniform(0.95, 1.05)
        vectors = {
            FactorKind.INCOME: np.array([mean, mean * rng.uniform(0.85, 0.95), (mean * 0.3) ** 2]),
        }
        for kind in (FactorKind.ETHNICS, FactorKind.JOB, FactorKind.COMMUTING, FactorKind.URBANIZATION):
            n = taxonomy.n_features(kind)
            weights = rng.dirichlet(np.full(n, 0.7))
            vectors[kind] = rng.poisson(weights * rng.uniform(200, 2000)).astype(float)
        y, x = rng.uniform(0, cfg.box_km, size=2)
        centroid = (lat0 + y / km_per_deg, lon0 + x / (km_per_deg * np.cos(np.radians(lat0))))
        profiles.append(RegionProfile(rid, vectors, centroid))

    driver = (rng.random((cfg.income_bins, T, C)) < cfg.source_rate).astype(np.int64)
    counts = np.zeros((T, I, C), dtype=np.int64)
    lo, hi = cfg.source_counts
    for k in range(I):
        z = driver[group[k]]
        if is_source[k]:
            counts[:, k, :] = z * rng.integers(lo, hi, size=(T, C))
        else:
            follow = np.empty_like(z)
            follow[0] = rng.random(C) < cfg.source_rate
            follow[1:] = z[:-1]
            flip = rng.random((T, C)) < cfg.follower_flip
            counts[:, k, :] = np.where(flip, 1 - follow, follow)

    period = Period(cfg.start, date.fromordinal(cfg.start.toordinal() + T - 1))
    tensor = CrimeTensor(counts, period.days(), regions, list(DEFAULT_CATEGORIES[:C]))
    dataset = dataset_from_parts(tensor, profiles, taxonomy, cfg.adjacency_km,
                                 sources={"synthetic": f"planted-income seed={cfg.seed}"})
    return PlantedCity(dataset, group, is_source, driver)
