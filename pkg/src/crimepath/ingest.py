"""Raw crime / census / POI loaders and day-by-region alignment."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
from shapely.geometry import Point, shape
from shapely.strtree import STRtree

from .features import COUNT_KINDS, FactorKind, FeatureTaxonomy, RegionProfile

EARTH_RADIUS_KM = 6371.0088

# Ten most common categories plus dangerous weapons, in descending frequency.
DEFAULT_CATEGORIES = (
    "Petit Larceny",
    "Harassment",
    "Assault",
    "Criminal Mischief",
    "Grand Larceny",
    "Dangerous Drugs",
    "Against Public Order",
    "Felony Assault",
    "Robbery",
    "Burglary",
    "Dangerous Weapons",
)

POI_DOMAINS = (
    "Residential",
    "Education",
    "Cultural",
    "Recreational",
    "Social Services",
    "Transportation",
    "Commercial",
    "Government",
    "Religious",
    "Health Services",
    "Public Safety",
    "Water",
    "Miscellaneous",
)

CENSUS_KINDS = (FactorKind.ETHNICS, FactorKind.INCOME, FactorKind.JOB, FactorKind.COMMUTING)


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class Period:
    start: date
    end: date  # inclusive

    def __post_init__(self):
        if self.end < self.start:
            raise IngestError(f"period ends before it starts: {self.start} .. {self.end}")

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    def days(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]

    def index(self, day: date) -> int:
        return (day - self.start).days

    def __contains__(self, day: date) -> bool:
        return self.start <= day <= self.end

    @classmethod
    def year(cls, year: int) -> "Period":
        return cls(date(year, 1, 1), date(year, 12, 31))


@dataclass
class SkipReport:
    """Row-level problems found while loading; loading never aborts on these."""

    skipped: Counter = field(default_factory=Counter)
    errors: list[tuple[int, str]] = field(default_factory=list)

    def skip(self, reason: str, row: int | None = None, detail: str = ""):
        self.skipped[reason] += 1
        if row is not None:
            self.errors.append((row, f"{reason}: {detail}" if detail else reason))

    @property
    def total(self) -> int:
        return sum(self.skipped.values())

    def to_dict(self) -> dict:
        return {"skipped": dict(sorted(self.skipped.items())), "errors": [list(e) for e in self.errors]}


@dataclass(frozen=True)
class CrimeEvent:
    day: date
    region_id: str
    category: int
    count: int = 1


@dataclass
class CrimeTensor:
    counts: np.ndarray  # (T, I, C) int64
    dates: list[date]
    regions: list[str]
    categories: list[str]

    def __post_init__(self):
        T, I, C = self.counts.shape
        if (T, I, C) != (len(self.dates), len(self.regions), len(self.categories)):
            raise IngestError("tensor shape does not match its indices")
        if np.any(self.counts < 0):
            raise IngestError("negative crime count")

    @property
    def occurrences(self) -> np.ndarray:
        return binarize(self.counts)

    @property
    def shape(self):
        return self.counts.shape


def binarize(counts: np.ndarray) -> np.ndarray:
    return (np.asarray(counts) >= 1).astype(np.int8)


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, newline="")
    return source


def load_crime_events(
    source,
    category_map: Mapping[str, int],
    regions: Iterable[str] | None = None,
    period: Period | None = None,
) -> tuple[list[CrimeEvent], SkipReport]:
    """Parse a ``date,region,category[,count]`` table into events.

    Rows with unmapped categories, unknown regions, out-of-period or malformed
    dates are skipped and recorded in the returned report.
    """
    known = set(regions) if regions is not None else None
    report = SkipReport()
    events: list[CrimeEvent] = []
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return events, report
        missing = {"date", "region", "category"} - set(reader.fieldnames)
        if missing:
            raise IngestError(f"crime table lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            cat = category_map.get((row["category"] or "").strip())
            if cat is None:
                report.skip("unmapped category")
                continue
            try:
                day = date.fromisoformat(row["date"].strip()[:10])
            except (ValueError, AttributeError):
                report.skip("malformed date", lineno, repr(row["date"]))
                continue
            region = (row["region"] or "").strip()
            if known is not None and region not in known:
                report.skip("unknown region", lineno, repr(region))
                continue
            if period is not None and day not in period:
                report.skip("outside period", lineno, day.isoformat())
                continue
            count = row.get("count")
            try:
                n = int(count) if count not in (None, "") else 1
            except ValueError:
                report.skip("malformed count", lineno, repr(count))
                continue
            if n < 1:
                report.skip("malformed count", lineno, repr(count))
                continue
            events.append(CrimeEvent(day, region, cat, n))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    return events, report


def build_crime_tensor(
    events: Iterable[CrimeEvent],
    regions: Sequence[str],
    period: Period,
    categories: Sequence[str],
) -> CrimeTensor:
    region_index = {r: i for i, r in enumerate(regions)}
    counts = np.zeros((period.n_days, len(regions), len(categories)), dtype=np.int64)
    for ev in events:
        if ev.day not in period:
            raise IngestError(f"event on {ev.day} outside period {period.start}..{period.end}")
        i = region_index.get(ev.region_id)
        if i is None:
            raise IngestError(f"event region {ev.region_id!r} not in region list")
        if not 0 <= ev.category < len(categories):
            raise IngestError(f"event category index {ev.category} out of range")
        counts[period.index(ev.day), i, ev.category] += ev.count
    return CrimeTensor(counts, period.days(), list(regions), list(categories))


def load_census(
    source,
    taxonomy: FeatureTaxonomy,
    mapping: Mapping[str, str] | None = None,
) -> tuple[dict[str, dict[FactorKind, np.ndarray]], SkipReport]:
    """Aggregate tract rows into district-level factor vectors.

    Expected columns: ``tract``, ``population``, one column per census feature
    of the taxonomy, and ``district`` unless ``mapping`` (tract -> district) is
    given. Count features are summed; Income features (household income
    statistics) become population-weighted means.
    """
    import pandas as pd

    df = pd.read_csv(source, dtype={"tract": str, "district": str})
    kinds = [k for k in CENSUS_KINDS if k in taxonomy.groups]
    needed = ["tract", "population"] + [f for k in kinds for f in taxonomy.features(k)]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise IngestError(f"census table lacks columns {missing}")
    report = SkipReport()
    if mapping is not None:
        df["district"] = df["tract"].map(mapping)
    elif "district" not in df.columns:
        raise IngestError("census table has no district column and no tract mapping was given")
    unmapped = df["district"].isna() | (df["district"].astype(str).str.strip() == "")
    for lineno in np.flatnonzero(unmapped.to_numpy()):
        report.skip("tract without district", int(lineno) + 2, str(df["tract"].iloc[lineno]))
    df = df[~unmapped].copy()
    df["district"] = df["district"].astype(str).str.strip()

    out: dict[str, dict[FactorKind, np.ndarray]] = {}
    for district, grp in df.groupby("district", sort=True):
        pop = grp["population"].to_numpy(dtype=float)
        vecs = {}
        for kind in kinds:
            cols = grp[taxonomy.features(kind)].to_numpy(dtype=float)
            if kind is FactorKind.INCOME:
                w = pop if pop.sum() > 0 else np.ones_like(pop)
                vecs[kind] = (cols * w[:, None]).sum(axis=0) / w.sum()
            else:
                vecs[kind] = cols.sum(axis=0)
        out[str(district)] = vecs
    return out, report


def load_region_geometry(source, id_property: str = "region") -> dict[str, object]:
    """Read a GeoJSON FeatureCollection into ``{region_id: shapely geometry}``."""
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text())
    else:
        data = json.load(source)
    out = {}
    for feat in data["features"]:
        rid = str(feat["properties"][id_property])
        if rid in out:
            raise IngestError(f"duplicate region id {rid!r} in geometry")
        out[rid] = shape(feat["geometry"])
    return out


def geometry_to_geojson(geoms: Mapping[str, object], id_property: str = "region") -> str:
    from shapely.geometry import mapping as to_mapping

    feats = [
        {"type": "Feature", "properties": {id_property: rid}, "geometry": to_mapping(g)}
        for rid, g in geoms.items()
    ]
    return json.dumps({"type": "FeatureCollection", "features": feats}, indent=1)


def load_poi(
    source,
    taxonomy: FeatureTaxonomy,
    regions: Sequence[str] | None = None,
    geometry: Mapping[str, object] | None = None,
) -> tuple[dict[str, np.ndarray], SkipReport]:
    """Count facilities per region and facility domain.

    Rows carry ``category`` plus either ``region`` or ``lat``/``lon``; the latter
    are assigned by point-in-polygon against ``geometry``. Regions without any
    POI get zero vectors.
    """
    feats = taxonomy.features(FactorKind.URBANIZATION)
    feat_index = {f.lower(): i for i, f in enumerate(feats)}
    if regions is None:
        if geometry is None:
            raise IngestError("load_poi needs a region list or region geometry")
        regions = list(geometry)
    counts = {r: np.zeros(len(feats)) for r in regions}
    report = SkipReport()

    tree = names = None
    if geometry is not None:
        names = list(geometry)
        tree = STRtree([geometry[n] for n in names])

    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            j = feat_index.get((row.get("category") or "").strip().lower())
            if j is None:
                report.skip("unknown facility category", lineno, repr(row.get("category")))
                continue
            region = (row.get("region") or "").strip()
            if not region:
                if tree is None:
                    report.skip("no region and no geometry", lineno)
                    continue
                try:
                    pt = Point(float(row["lon"]), float(row["lat"]))
                except (KeyError, TypeError, ValueError):
                    report.skip("malformed coordinates", lineno)
                    continue
                hits = sorted(names[k] for k in tree.query(pt, predicate="covered_by"))
                if not hits:
                    report.skip("outside all regions", lineno, f"{pt.y},{pt.x}")
                    continue
                region = hits[0]
            if region not in counts:
                report.skip("unknown region", lineno, repr(region))
                continue
            counts[region][j] += 1
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    return counts, report


def haversine_km(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass
class Geography:
    distance_km: np.ndarray  # (I, I)
    adjacency: np.ndarray  # (I, I) 0/1, zero diagonal


def compute_geography(
    profiles: Sequence[RegionProfile],
    threshold_km: float = 3.0,
    use_borders: bool = True,
) -> Geography:
    """Pairwise haversine distances and adjacency indicators.

    Two regions are adjacent if their polygons touch (when both have geometry
    and ``use_borders``) or their centroids lie within ``threshold_km``.
    """
    if any(p.centroid is None for p in profiles):
        raise IngestError("every region needs a centroid")
    lat = np.array([p.centroid[0] for p in profiles])
    lon = np.array([p.centroid[1] for p in profiles])
    dist = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    dist = (dist + dist.T) / 2
    np.fill_diagonal(dist, 0.0)
    adj = dist <= threshold_km
    if use_borders:
        n = len(profiles)
        for i in range(n):
            gi = profiles[i].geometry
            if gi is None:
                continue
            for j in range(i + 1, n):
                gj = profiles[j].geometry
                if gj is not None and gi.intersects(gj):
                    adj[i, j] = adj[j, i] = True
    np.fill_diagonal(adj, False)
    return Geography(dist, adj.astype(np.int8))


def centroid_latlon(geom) -> tuple[float, float]:
    c = geom.centroid
    return (float(c.y), float(c.x))


def assemble_profiles(
    regions: Sequence[str],
    census: Mapping[str, Mapping[FactorKind, np.ndarray]],
    poi: Mapping[str, np.ndarray],
    taxonomy: FeatureTaxonomy,
    geometry: Mapping[str, object] | None = None,
    centroids: Mapping[str, tuple[float, float]] | None = None,
) -> list[RegionProfile]:
    """Merge loader outputs into one profile per region (missing kinds left absent)."""
    out = []
    for r in regions:
        vectors = {}
        for kind in COUNT_KINDS:
            if kind not in taxonomy.groups:
                continue
            if kind is FactorKind.URBANIZATION:
                if r in poi:
                    vectors[kind] = np.asarray(poi[r], dtype=float)
            elif r in census and kind in census[r]:
                vectors[kind] = np.asarray(census[r][kind], dtype=float)
        geom = geometry.get(r) if geometry else None
        cen = None
        if centroids and r in centroids:
            cen = tuple(centroids[r])
        elif geom is not None:
            cen = centroid_latlon(geom)
        out.append(RegionProfile(r, vectors, cen, geom))
    return out


def crime_counts_to_csv(tensor: CrimeTensor) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "region", "category", "count"])
    for t, i, c in zip(*np.nonzero(tensor.counts)):
        w.writerow([tensor.dates[t].isoformat(), tensor.regions[i], tensor.categories[c], int(tensor.counts[t, i, c])])
    return buf.getvalue()
