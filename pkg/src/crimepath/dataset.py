"""In-memory dataset, the on-disk dataset bundle, and persisted network/similarity outputs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import (
    FactorKind,
    FeatureTaxonomy,
    RegionProfile,
    dump_taxonomy,
    load_taxonomy,
    profiles_from_csv,
    profiles_to_csv,
)
from .hin import HIN, BinConfig, FactorBinNode, build_hin
from .ingest import (
    CrimeTensor,
    Geography,
    Period,
    compute_geography,
    crime_counts_to_csv,
    geometry_to_geojson,
    load_region_geometry,
)
from .similarity import SimilarityMatrix, similarity_matrix

BUNDLE_VERSION = 1


@dataclass
class Dataset:
    tensor: CrimeTensor
    profiles: list[RegionProfile]
    taxonomy: FeatureTaxonomy
    geography: Geography
    sources: dict[str, str] = field(default_factory=dict)  # name -> sha256 of raw input

    def __post_init__(self):
        if [p.region_id for p in self.profiles] != self.tensor.regions:
            raise ValueError("profiles and crime tensor disagree on region order")

    @property
    def regions(self) -> list[str]:
        return self.tensor.regions

    @property
    def categories(self) -> list[str]:
        return self.tensor.categories

    @property
    def period(self) -> Period:
        return Period(self.tensor.dates[0], self.tensor.dates[-1])

    def manifest(self) -> dict:
        return {
            "bundle_version": BUNDLE_VERSION,
            "period": {"start": self.period.start.isoformat(), "end": self.period.end.isoformat()},
            "n_days": len(self.tensor.dates),
            "n_categories": len(self.categories),
            "categories": self.categories,
            "n_regions": len(self.regions),
            "regions": self.regions,
            "sources": dict(sorted(self.sources.items())),
        }


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _matrix_csv(regions: Sequence[str], values: np.ndarray, fmt=repr) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id"] + list(regions))
    for r, row in zip(regions, values):
        w.writerow([r] + [fmt(v.item()) for v in row])
    return buf.getvalue()


def _read_matrix(path: Path, dtype=float) -> tuple[list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(path.read_text())))
    return rows[0][1:], np.array([[dtype(float(v)) for v in r[1:]] for r in rows[1:]])


def write_bundle(dataset: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(dataset.manifest(), indent=2) + "\n")
    (out / "crime_counts.csv").write_text(crime_counts_to_csv(dataset.tensor))
    (out / "profiles.csv").write_text(profiles_to_csv(dataset.profiles, dataset.taxonomy))
    (out / "taxonomy.yaml").write_text(dump_taxonomy(dataset.taxonomy))
    (out / "adjacency.csv").write_text(_matrix_csv(dataset.regions, dataset.geography.adjacency, fmt=str))
    (out / "distance_km.csv").write_text(_matrix_csv(dataset.regions, dataset.geography.distance_km))
    geoms = {p.region_id: p.geometry for p in dataset.profiles if p.geometry is not None}
    if geoms:
        (out / "geometry.geojson").write_text(geometry_to_geojson(geoms) + "\n")
    return out


def read_bundle(path: str | Path) -> Dataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no dataset bundle at {root}")
    manifest = json.loads(manifest_path.read_text())
    taxonomy = load_taxonomy(root / "taxonomy.yaml")
    regions = manifest["regions"]
    categories = manifest["categories"]
    period = Period(date.fromisoformat(manifest["period"]["start"]), date.fromisoformat(manifest["period"]["end"]))
    counts = np.zeros((period.n_days, len(regions), len(categories)), dtype=np.int64)
    r_idx = {r: i for i, r in enumerate(regions)}
    c_idx = {c: i for i, c in enumerate(categories)}
    with open(root / "crime_counts.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            counts[period.index(date.fromisoformat(row["date"])), r_idx[row["region"]], c_idx[row["category"]]] = int(row["count"])
    tensor = CrimeTensor(counts, period.days(), list(regions), list(categories))

    profiles = profiles_from_csv((root / "profiles.csv").read_text(), taxonomy)
    geo_path = root / "geometry.geojson"
    if geo_path.exists():
        geoms = load_region_geometry(geo_path)
        for p in profiles:
            p.geometry = geoms.get(p.region_id)
    _, adjacency = _read_matrix(root / "adjacency.csv", dtype=int)
    _, distance = _read_matrix(root / "distance_km.csv")
    geography = Geography(distance, adjacency.astype(np.int8))
    return Dataset(tensor, profiles, taxonomy, geography, dict(manifest.get("sources", {})))


@dataclass
class Graph:
    hin: HIN
    sims: dict[FactorKind, SimilarityMatrix]


def build_graph(dataset: Dataset, bin_config: BinConfig = BinConfig()) -> Graph:
    feature_names = {k: dataset.taxonomy.features(k) for k in dataset.taxonomy.kinds}
    hin = build_hin(dataset.profiles, bin_config, dataset.geography.adjacency, feature_names)
    sims = {}
    for kind in hin.kinds:
        sims[kind] = similarity_matrix(
            dataset.profiles,
            kind,
            dataset.taxonomy,
            hin,
            distance_km=dataset.geography.distance_km,
            adjacency=dataset.geography.adjacency,
        )
    return Graph(hin, sims)


def write_graph(graph: Graph, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "edges.tsv").write_text(graph.hin.edge_list_text())
    (out / "regions.txt").write_text("\n".join(graph.hin.regions) + "\n")
    for kind, sim in graph.sims.items():
        (out / f"similarity_{kind.metapath}.csv").write_text(sim.to_csv())
    return out


def hin_from_edge_list(regions: Sequence[str], text: str) -> HIN:
    members: dict[tuple[FactorKind, str], set] = {}
    lines = text.splitlines()
    for line in lines[1:]:
        if not line.strip():
            continue
        _, region, kind_name, label = line.split("\t")
        members.setdefault((FactorKind.parse(kind_name), label), set()).add(region)
    bins: dict[FactorKind, list[FactorBinNode]] = {}
    for (kind, label), regs in members.items():
        bins.setdefault(kind, []).append(FactorBinNode(kind, label, frozenset(regs)))
    return HIN(list(regions), {k: sorted(v) for k, v in bins.items()})


def read_graph(path: str | Path) -> Graph:
    root = Path(path)
    if not (root / "edges.tsv").exists():
        raise FileNotFoundError(f"no network outputs at {root}")
    regions = [r for r in (root / "regions.txt").read_text().splitlines() if r]
    hin = hin_from_edge_list(regions, (root / "edges.tsv").read_text())
    sims = {}
    for kind in FactorKind:
        p = root / f"similarity_{kind.metapath}.csv"
        if p.exists():
            sims[kind] = SimilarityMatrix.from_csv(kind, p.read_text())
    # kinds present in the similarity files but with no edges still need an (empty) bin list
    for kind in sims:
        hin.bins.setdefault(kind, [])
    hin = HIN(hin.regions, hin.bins)
    return Graph(hin, sims)


def dataset_from_parts(
    tensor: CrimeTensor,
    profiles: list[RegionProfile],
    taxonomy: FeatureTaxonomy,
    adjacency_km: float = 3.0,
    sources: Mapping[str, str] | None = None,
) -> Dataset:
    geography = compute_geography(profiles, adjacency_km)
    return Dataset(tensor, profiles, taxonomy, geography, dict(sources or {}))
