"""Heterogeneous network of regions and factor-bin nodes, plus meta-path instances.

Every meta-path is the symmetric length-2 pattern region -> factor -> region.
Two regions are connected under a factor kind when they share a bin node of
that kind. Binning rules per kind:

* Income: quantile bin of the mean-income feature.
* Ethnics: quantile bin of the majority-group share.
* Job, Commuting, Urbanization: the dominant feature (argmax count).
* Geographic: one link node per adjacent region pair.

``BinConfig.strategies`` swaps the rule for any count kind: ``quantile``,
``dominant`` or ``single`` (one bin holding every region).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import FactorKind, RegionProfile


class HinError(ValueError):
    pass


DEFAULT_STRATEGIES = {
    FactorKind.INCOME: "quantile",
    FactorKind.ETHNICS: "quantile",
    FactorKind.JOB: "dominant",
    FactorKind.COMMUTING: "dominant",
    FactorKind.URBANIZATION: "dominant",
}
STRATEGIES = ("quantile", "dominant", "single")


@dataclass(frozen=True)
class BinConfig:
    income_bins: int = 3
    ethnics_bins: int = 3  # also used by any other kind binned by quantile
    income_feature: int = 0  # index of the mean-income feature in the Income vector
    strategies: dict = field(default_factory=dict)  # kind name -> strategy override

    def strategy(self, kind: FactorKind) -> str:
        for key, value in self.strategies.items():
            if FactorKind.parse(key) is kind:
                if value not in STRATEGIES:
                    raise HinError(f"unknown binning strategy {value!r} for {kind.value}")
                return value
        return DEFAULT_STRATEGIES[kind]


@dataclass(frozen=True, order=True)
class FactorBinNode:
    kind: FactorKind = field(compare=False)
    label: str
    members: frozenset = field(compare=False)

    def __post_init__(self):
        if not self.members:
            raise HinError(f"empty bin {self.label}")


@dataclass(frozen=True)
class MetaPathType:
    kind: FactorKind

    @property
    def name(self) -> str:
        return self.kind.metapath


METAPATH_TYPES = tuple(MetaPathType(k) for k in FactorKind)


@dataclass(frozen=True)
class MetaPathInstance:
    source: str
    intermediate: FactorBinNode
    target: str

    def __repr__(self):
        return f"<{self.source}, {self.intermediate.label}, {self.target}>"


def quantile_bins(values: Sequence[float], n_bins: int) -> np.ndarray:
    """Assign each value to one of ``n_bins`` equal-frequency bins.

    Bin ``k`` starts at the value at sorted position ``start_k`` where the
    starts follow an as-equal-as-possible split of the sorted order. Values
    tied across a boundary all go to the upper bin, so identical values never
    straddle bins (an all-equal input lands in a single bin).
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n_bins < 1:
        raise HinError("need at least one bin")
    if n < n_bins:
        raise HinError(f"{n} regions cannot fill {n_bins} bins")
    sizes = [n // n_bins + (1 if k < n % n_bins else 0) for k in range(n_bins)]
    starts = np.cumsum([0] + sizes[:-1])
    ordered = np.sort(values, kind="stable")
    thresholds = ordered[starts[1:]]
    return np.searchsorted(thresholds, values, side="right")


def _summary(kind: FactorKind, vec: np.ndarray, cfg: BinConfig) -> float:
    if kind is FactorKind.INCOME:
        return float(vec[cfg.income_feature])
    total = float(vec.sum())
    return float(vec.max()) / total if total > 0 else 0.0


def bin_regions(
    profiles: Sequence[RegionProfile],
    kind: FactorKind,
    bin_config: BinConfig = BinConfig(),
    adjacency: np.ndarray | None = None,
    feature_names: Sequence[str] | None = None,
) -> list[FactorBinNode]:
    ids = [p.region_id for p in profiles]
    if kind is FactorKind.GEOGRAPHIC:
        if adjacency is None:
            raise HinError("Geographic binning needs an adjacency matrix")
        adj = np.asarray(adjacency)
        nodes = []
        for i, j in zip(*np.nonzero(np.triu(adj, 1))):
            nodes.append(FactorBinNode(kind, f"geo:{ids[i]}|{ids[j]}", frozenset((ids[i], ids[j]))))
        return sorted(nodes)

    vectors = [np.asarray(p.vectors[kind], dtype=float) for p in profiles]
    strategy = bin_config.strategy(kind)
    if strategy == "single":
        groups = {f"{kind.value.lower()}:all": set(ids)} if ids else {}
    elif strategy == "quantile":
        n_bins = bin_config.income_bins if kind is FactorKind.INCOME else bin_config.ethnics_bins
        labels = quantile_bins([_summary(kind, v, bin_config) for v in vectors], n_bins)
        groups: dict[str, set] = {}
        for rid, b in zip(ids, labels):
            groups.setdefault(f"{kind.value.lower()}:q{b}", set()).add(rid)
    else:
        groups = {}
        for rid, v in zip(ids, vectors):
            if v.sum() <= 0:
                continue  # no dominant category for an empty region
            k = int(np.argmax(v))
            name = feature_names[k] if feature_names is not None else str(k)
            groups.setdefault(f"{kind.value.lower()}:{name}", set()).add(rid)
    return sorted(FactorBinNode(kind, label, frozenset(m)) for label, m in groups.items())


@dataclass
class HIN:
    regions: list[str]
    bins: dict[FactorKind, list[FactorBinNode]]

    def __post_init__(self):
        self.region_index = {r: i for i, r in enumerate(self.regions)}
        self._member_of: dict[FactorKind, dict[str, list[FactorBinNode]]] = {}
        for kind, nodes in self.bins.items():
            table: dict[str, list[FactorBinNode]] = {r: [] for r in self.regions}
            for node in nodes:
                for r in node.members:
                    if r not in table:
                        raise HinError(f"bin {node.label} references unknown region {r!r}")
                    table[r].append(node)
            if kind is not FactorKind.GEOGRAPHIC:
                for r, held in table.items():
                    if len(held) > 1:
                        raise HinError(f"region {r!r} in {len(held)} {kind.value} bins")
            self._member_of[kind] = table

    @property
    def kinds(self) -> list[FactorKind]:
        return [k for k in FactorKind if k in self.bins]

    def bins_of(self, region: str, kind: FactorKind) -> list[FactorBinNode]:
        if region not in self.region_index:
            raise HinError(f"unknown region {region!r}")
        return self._member_of.get(kind, {}).get(region, [])

    def edges(self) -> list[tuple[str, str, str, str]]:
        """Typed region<->bin edges as (node_type, node_id, node_type, node_id)."""
        out = []
        for kind in self.kinds:
            for node in self.bins[kind]:
                for r in sorted(node.members, key=self.region_index.__getitem__):
                    out.append(("region", r, kind.value, node.label))
        return out

    def edge_list_text(self) -> str:
        buf = io.StringIO()
        buf.write("node_type\tnode_id\tnode_type\tnode_id\n")
        for e in self.edges():
            buf.write("\t".join(e) + "\n")
        return buf.getvalue()

    @property
    def n_entity_types(self) -> int:
        return 1 + len([k for k in self.kinds if self.bins[k]])


def build_hin(
    profiles: Sequence[RegionProfile],
    bin_config: BinConfig = BinConfig(),
    adjacency: np.ndarray | None = None,
    feature_names: dict[FactorKind, Sequence[str]] | None = None,
) -> HIN:
    """Bin every available kind and assemble the network.

    Quantile bin counts are capped at the number of regions so that tiny
    region sets still produce a (possibly trivial) network.
    """
    n = len(profiles)
    cfg = BinConfig(
        income_bins=max(1, min(bin_config.income_bins, n)),
        ethnics_bins=max(1, min(bin_config.ethnics_bins, n)),
        income_feature=bin_config.income_feature,
        strategies=dict(bin_config.strategies),
    )
    bins = {}
    for kind in FactorKind:
        if kind is FactorKind.GEOGRAPHIC:
            if adjacency is not None:
                bins[kind] = bin_regions(profiles, kind, cfg, adjacency)
        elif n and all(kind in p.vectors for p in profiles):
            names = (feature_names or {}).get(kind)
            bins[kind] = bin_regions(profiles, kind, cfg, feature_names=names)
    return HIN([p.region_id for p in profiles], bins)


def enumerate_instances(
    hin: HIN,
    metapath_type: MetaPathType | FactorKind,
    target: str,
    include_self: bool = True,
) -> list[MetaPathInstance]:
    """All instances (target, m, r) of one meta-path type.

    Ordered by intermediate label, then by the other region's index. The
    self-instance is emitted once, through the first bin holding the target.
    """
    kind = metapath_type.kind if isinstance(metapath_type, MetaPathType) else metapath_type
    held = sorted(hin.bins_of(target, kind))
    out = []
    self_done = False
    for node in held:
        for r in sorted(node.members, key=hin.region_index.__getitem__):
            if r == target:
                if not include_self or self_done:
                    continue
                self_done = True
            out.append(MetaPathInstance(target, node, r))
    return out


def instance_mask(hin: HIN, kind: FactorKind, include_self: bool = True) -> np.ndarray:
    """Boolean (I, I) matrix: entry (i, j) set iff an instance (i, m, j) exists."""
    n = len(hin.regions)
    mask = np.zeros((n, n), dtype=bool)
    for node in hin.bins.get(kind, []):
        idx = [hin.region_index[r] for r in node.members]
        mask[np.ix_(idx, idx)] = True
    if not include_self:
        np.fill_diagonal(mask, False)
    return mask
