"""Factor taxonomy and per-region factor profiles."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml


class FactorKind(enum.Enum):
    ETHNICS = "Ethnics"
    INCOME = "Income"
    JOB = "Job"
    COMMUTING = "Commuting"
    URBANIZATION = "Urbanization"
    GEOGRAPHIC = "Geographic"

    @property
    def metapath(self) -> str:
        return _METAPATH_CODES[self]

    @classmethod
    def parse(cls, name: str) -> "FactorKind":
        for kind in cls:
            if name in (kind.value, kind.name, kind.metapath):
                return kind
        raise ValueError(f"unknown factor kind: {name!r}")


_METAPATH_CODES = {
    FactorKind.ETHNICS: "RER",
    FactorKind.INCOME: "RIR",
    FactorKind.JOB: "RJR",
    FactorKind.COMMUTING: "RCR",
    FactorKind.URBANIZATION: "RUR",
    FactorKind.GEOGRAPHIC: "RGR",
}

# Kinds whose factor vectors are feature counts declared in a taxonomy.
# Geographic vectors are adjacency indicators derived from region geometry.
COUNT_KINDS = (
    FactorKind.ETHNICS,
    FactorKind.INCOME,
    FactorKind.JOB,
    FactorKind.COMMUTING,
    FactorKind.URBANIZATION,
)


@dataclass(frozen=True)
class FeatureTaxonomy:
    """Ordered factor kind -> subcategory -> feature name tree.

    ``groups[kind]`` is a tuple of ``(subcategory, feature_names)`` pairs. The
    order of subcategories and names fixes the layout of every count vector of
    that kind.
    """

    groups: Mapping[FactorKind, tuple[tuple[str, tuple[str, ...]], ...]]

    def __post_init__(self):
        for kind, subcats in self.groups.items():
            if kind is FactorKind.GEOGRAPHIC:
                raise ValueError("Geographic vectors are derived from geometry, not declared")
            if not subcats:
                raise ValueError(f"{kind.value}: no subcategories")
            seen: set[str] = set()
            for name, feats in subcats:
                if not feats:
                    raise ValueError(f"{kind.value}/{name}: empty subcategory")
                dup = seen.intersection(feats)
                if dup or len(set(feats)) != len(feats):
                    raise ValueError(f"{kind.value}/{name}: duplicate features {sorted(dup)}")
                seen.update(feats)

    @property
    def kinds(self) -> list[FactorKind]:
        return [k for k in COUNT_KINDS if k in self.groups]

    def features(self, kind: FactorKind) -> list[str]:
        return [f for _, feats in self.groups[kind] for f in feats]

    def n_features(self, kind: FactorKind) -> int:
        return sum(len(feats) for _, feats in self.groups[kind])

    def subcategory_sizes(self, kind: FactorKind) -> list[int]:
        return [len(feats) for _, feats in self.groups[kind]]

    def subcategory_slices(self, kind: FactorKind) -> list[slice]:
        out, start = [], 0
        for size in self.subcategory_sizes(kind):
            out.append(slice(start, start + size))
            start += size
        return out

    def to_dict(self) -> dict:
        return {
            kind.value: {name: list(feats) for name, feats in self.groups[kind]}
            for kind in self.kinds
        }

    @classmethod
    def from_dict(cls, tree: Mapping) -> "FeatureTaxonomy":
        groups = {}
        for kind_name, subcats in tree.items():
            kind = FactorKind.parse(kind_name)
            if not isinstance(subcats, Mapping):
                raise ValueError(f"{kind_name}: expected subcategory mapping")
            groups[kind] = tuple((str(name), tuple(str(f) for f in feats)) for name, feats in subcats.items())
        return cls(groups)

    @classmethod
    def single(cls, kind: FactorKind, subcats: Mapping[str, Sequence[str]]) -> "FeatureTaxonomy":
        return cls.from_dict({kind.value: dict(subcats)})


def load_taxonomy(path: str | Path | None = None) -> FeatureTaxonomy:
    """Read a YAML taxonomy file; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("crimepath").joinpath("data/default_taxonomy.yaml").read_text()
    else:
        text = Path(path).read_text()
    tree = yaml.safe_load(text) or {}
    return FeatureTaxonomy.from_dict(tree)


def dump_taxonomy(taxonomy: FeatureTaxonomy) -> str:
    return yaml.safe_dump(taxonomy.to_dict(), sort_keys=False)


@dataclass
class RegionProfile:
    region_id: str
    vectors: dict[FactorKind, np.ndarray] = field(default_factory=dict)
    centroid: tuple[float, float] | None = None  # (lat, lon) degrees
    geometry: object | None = None  # shapely polygon, optional

    def vector(self, kind: FactorKind) -> np.ndarray:
        return self.vectors[kind]


@dataclass(frozen=True)
class Violation:
    region_id: str
    kind: FactorKind
    reason: str

    def __str__(self):
        return f"{self.region_id}/{self.kind.value}: {self.reason}"


def validate_profiles(profiles: Iterable[RegionProfile], taxonomy: FeatureTaxonomy) -> list[Violation]:
    report = []
    for prof in profiles:
        for kind in taxonomy.kinds:
            vec = prof.vectors.get(kind)
            if vec is None:
                report.append(Violation(prof.region_id, kind, "missing vector"))
                continue
            vec = np.asarray(vec, dtype=float)
            expected = taxonomy.n_features(kind)
            if vec.shape != (expected,):
                report.append(Violation(prof.region_id, kind, f"length {vec.size} != {expected}"))
            elif not np.all(np.isfinite(vec)):
                report.append(Violation(prof.region_id, kind, "non-finite value"))
            elif np.any(vec < 0):
                bad = [taxonomy.features(kind)[i] for i in np.flatnonzero(vec < 0)]
                report.append(Violation(prof.region_id, kind, f"negative count in {', '.join(bad)}"))
    return report


def profiles_to_csv(profiles: Sequence[RegionProfile], taxonomy: FeatureTaxonomy) -> str:
    header = ["region_id", "lat", "lon"]
    for kind in taxonomy.kinds:
        header += [f"{kind.value}.{f}" for f in taxonomy.features(kind)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for prof in profiles:
        lat, lon = prof.centroid if prof.centroid is not None else ("", "")
        row = [prof.region_id, _fmt(lat), _fmt(lon)]
        for kind in taxonomy.kinds:
            row += [_fmt(v) for v in prof.vectors[kind]]
        writer.writerow(row)
    return buf.getvalue()


def profiles_from_csv(text: str, taxonomy: FeatureTaxonomy) -> list[RegionProfile]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ValueError("profile table has no header row")
    out = []
    for row in reader:
        vectors = {
            kind: np.array([float(row[f"{kind.value}.{f}"]) for f in taxonomy.features(kind)])
            for kind in taxonomy.kinds
        }
        centroid = None
        if row.get("lat") not in (None, "") and row.get("lon") not in (None, ""):
            centroid = (float(row["lat"]), float(row["lon"]))
        out.append(RegionProfile(row["region_id"], vectors, centroid))
    return out


def _fmt(x) -> str:
    if x == "":
        return ""
    return repr(float(x))
