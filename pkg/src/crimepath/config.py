"""Run configuration: one YAML file, optionally overridden from the command line."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from datetime import date
from pathlib import Path
from typing import Any

import yaml

from .features import FactorKind
from .hin import BinConfig
from .ingest import DEFAULT_CATEGORIES
from .synthetic import PlantedConfig
from .training import FIRST_TARGET_DAY, ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    crime: str | None = None
    census: str | None = None
    poi: str | None = None
    regions: str | None = None  # GeoJSON FeatureCollection
    region_id_property: str = "region"
    taxonomy: str | None = None  # None -> packaged default
    tract_map: str | None = None  # optional CSV tract,district
    start: str = "2014-01-01"
    end: str = "2014-12-31"
    # category name -> raw labels accepted in the crime table (the name itself always matches)
    categories: dict[str, list[str]] = field(default_factory=lambda: {c: [] for c in DEFAULT_CATEGORIES})
    adjacency_km: float = 3.0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    hin: BinConfig = field(default_factory=BinConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: PlantedConfig = field(default_factory=PlantedConfig)
    first_target_day: int = FIRST_TARGET_DAY
    seed: int = 0

    def validate(self):
        self.model.validate()
        if self.train.lr < 0 or self.train.epochs < 0 or self.train.batch_days < 1:
            raise ConfigError("train.lr and train.epochs must be non-negative, batch_days positive")
        if not 0 < self.train.threshold < 1:
            raise ConfigError("train.threshold must lie in (0, 1)")
        if self.hin.income_bins < 1 or self.hin.ethnics_bins < 1:
            raise ConfigError("bin counts must be positive")
        for key in self.hin.strategies:
            try:
                kind = FactorKind.parse(key)
                if kind is FactorKind.GEOGRAPHIC:
                    raise ConfigError("hin.strategies: Geographic bins are fixed to adjacent pairs")
                self.hin.strategy(kind)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"hin.strategies: {exc}") from exc
        if not self.data.categories:
            raise ConfigError("no crime categories configured")
        try:
            date.fromisoformat(self.data.start), date.fromisoformat(self.data.end)
        except ValueError as exc:
            raise ConfigError(f"bad period date: {exc}") from exc

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, date):
        return x.isoformat()
    return x


def _coerce(cls, value: Any, name: str):
    if is_dataclass(cls):
        if value is None:
            return cls()
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected a mapping")
        known = {f.name: f for f in fields(cls)}
        unknown = set(value) - set(known)
        if unknown:
            raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
        kwargs = {}
        defaults = cls()
        for key, raw in value.items():
            current = getattr(defaults, key)
            kwargs[key] = _coerce_leaf(current, raw, f"{name}.{key}")
        return cls(**kwargs)
    return value


def _coerce_leaf(current, raw, name):
    if is_dataclass(current):
        return _coerce(type(current), raw, name)
    if isinstance(current, date):
        return date.fromisoformat(str(raw))
    if isinstance(current, tuple):
        return tuple(raw)
    if isinstance(current, bool):
        if isinstance(raw, str):
            return raw.lower() in ("1", "true", "yes", "on")
        return bool(raw)
    if isinstance(current, float) and isinstance(raw, (int, float, str)):
        return float(raw)
    if isinstance(current, int) and isinstance(raw, (int, str)) and not isinstance(raw, bool):
        return int(raw)
    if name.endswith("categories") and isinstance(raw, list):
        return {str(c): [] for c in raw}
    return raw


def from_dict(tree: dict | None) -> RunConfig:
    cfg = _coerce(RunConfig, tree or {}, "config")
    if isinstance(cfg.model.top_k, str):
        cfg.model.top_k = None if cfg.model.top_k.lower() in ("none", "inf", "") else int(cfg.model.top_k)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    tree: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        tree = yaml.safe_load(p.read_text()) or {}
        # relative data paths resolve against the config file's directory
        data = tree.get("data") or {}
        for key in ("crime", "census", "poi", "regions", "taxonomy", "tract_map"):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str((p.parent / data[key]).resolve())
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return from_dict(tree)
