"""PathSim and its subcategory-weighted (distribution-aware) variant."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FactorKind, FeatureTaxonomy, RegionProfile
from .hin import HIN, instance_mask


def path_count(counts_i, counts_j) -> float:
    """Number of length-2 path instances between two regions.

    A region with ``a`` units of feature ``f`` and another with ``b`` units are
    joined by ``a * b`` paths through ``f``.
    """
    a = np.asarray(counts_i, dtype=float)
    b = np.asarray(counts_j, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"count vectors differ in length: {a.shape} vs {b.shape}")
    return float(a @ b)


def classic_pathsim(counts_i, counts_j) -> float:
    num = 2.0 * path_count(counts_i, counts_j)
    den = path_count(counts_i, counts_i) + path_count(counts_j, counts_j)
    return num / den if den > 0 else 0.0


def _slices(subcategories, kind: FactorKind | None, n: int) -> list[slice]:
    if isinstance(subcategories, FeatureTaxonomy):
        if kind is None:
            kinds = subcategories.kinds
            if len(kinds) != 1:
                raise ValueError("taxonomy holds several kinds; pass kind=")
            kind = kinds[0]
        return subcategories.subcategory_slices(kind)
    out, start = [], 0
    for size in subcategories:
        out.append(slice(start, start + int(size)))
        start += int(size)
    if start != n:
        raise ValueError(f"subcategory sizes sum to {start}, vectors have {n} features")
    return out


def dist_aware_pathsim(counts_i, counts_j, subcategories, kind: FactorKind | None = None) -> float:
    """Sum over subcategories z of ``|z|/|Z|`` times PathSim restricted to z.

    ``subcategories`` is either a taxonomy (with ``kind``) or the list of
    subcategory sizes in vector order. A subcategory empty in both regions
    contributes zero; weights are not renormalized.
    """
    a = np.asarray(counts_i, dtype=float)
    b = np.asarray(counts_j, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"count vectors differ in length: {a.shape} vs {b.shape}")
    total = a.size
    s = 0.0
    for sl in _slices(subcategories, kind, total):
        width = sl.stop - sl.start
        s += width / total * classic_pathsim(a[sl], b[sl])
    return s


def dist_aware_matrix(counts: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """All-pairs distribution-aware PathSim for an (I, F) count matrix."""
    counts = np.asarray(counts, dtype=float)
    total = counts.shape[1]
    out = np.zeros((counts.shape[0], counts.shape[0]))
    start = 0
    for size in sizes:
        block = counts[:, start : start + size]
        gram = block @ block.T
        diag = np.diag(gram)
        den = diag[:, None] + diag[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(den > 0, 2.0 * gram / np.where(den > 0, den, 1.0), 0.0)
        out += size / total * sim
        start += size
    return np.clip((out + out.T) / 2, 0.0, 1.0)


def geographic_similarity(distance_km: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """exp(-d / sigma) on adjacent pairs, sigma the median adjacent distance; 1 on the diagonal."""
    adj = np.asarray(adjacency).astype(bool)
    dist = np.asarray(distance_km, dtype=float)
    upper = dist[np.triu(adj, 1)]
    sigma = float(np.median(upper)) if upper.size else 1.0
    if sigma <= 0:
        sigma = 1.0
    sim = np.where(adj, np.exp(-dist / sigma), 0.0)
    np.fill_diagonal(sim, 1.0)
    return sim


@dataclass
class SimilarityMatrix:
    kind: FactorKind
    regions: list[str]
    values: np.ndarray

    def __getitem__(self, pair):
        i, j = pair
        idx = {r: k for k, r in enumerate(self.regions)}
        return self.values[idx[i], idx[j]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region_id"] + self.regions)
        for r, row in zip(self.regions, self.values):
            w.writerow([r] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, kind: FactorKind, text: str) -> "SimilarityMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        regions = rows[0][1:]
        if [r[0] for r in rows[1:]] != regions:
            raise ValueError("similarity matrix row and column ids differ")
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(kind, regions, values)


def similarity_matrix(
    profiles: Sequence[RegionProfile],
    kind: FactorKind,
    taxonomy: FeatureTaxonomy | None,
    hin: HIN,
    distance_km: np.ndarray | None = None,
    adjacency: np.ndarray | None = None,
) -> SimilarityMatrix:
    """Pairwise similarity for one meta-path type; zero for pairs with no instance."""
    regions = [p.region_id for p in profiles]
    if regions != hin.regions:
        raise ValueError("profiles and network list regions in different orders")
    mask = instance_mask(hin, kind, include_self=True)
    if kind is FactorKind.GEOGRAPHIC:
        if distance_km is None or adjacency is None:
            raise ValueError("Geographic similarity needs distances and adjacency")
        values = geographic_similarity(distance_km, adjacency)
        values = np.where(mask | np.eye(len(regions), dtype=bool), values, 0.0)
    else:
        counts = np.stack([np.asarray(p.vectors[kind], dtype=float) for p in profiles])
        values = np.where(mask, dist_aware_matrix(counts, taxonomy.subcategory_sizes(kind)), 0.0)
    return SimilarityMatrix(kind, regions, values)
