"""Loss, chronological splits, training loop, metrics, checkpoints and attention summaries."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import Dataset, Graph
from .features import FactorKind
from .ingest import binarize
from .model import GraphInputs, LstmOnlyModel, MetaPathModel, build_graph_inputs

log = logging.getLogger(__name__)

EPS = 1e-7

# Day counts of the reference protocol (train / validation / test) for a
# 365-day year whose first prediction target is day 29. Used as apportionment
# weights so other period lengths keep the same proportions.
REFERENCE_SPLIT_DAYS = (255, 18, 64)
FIRST_TARGET_DAY = 29  # 1-based


class TrainingDiverged(RuntimeError):
    pass


def bce_loss(predictions, targets, eps: float = EPS):
    """Summed binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    p = torch.as_tensor(predictions)
    y = torch.as_tensor(targets, dtype=p.dtype)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {tuple(p.shape)} != target shape {tuple(y.shape)}")
    p = p.clamp(eps, 1.0 - eps)
    return -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p)).sum()


def apportion(n: int, weights: Sequence[float]) -> list[int]:
    """Split ``n`` items proportionally to ``weights`` by largest remainder (ties to the earlier part)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("split weights must be non-negative with a positive sum")
    exact = n * w / w.sum()
    base = np.floor(exact).astype(int)
    rest = n - int(base.sum())
    order = sorted(range(len(w)), key=lambda k: (-(exact[k] - base[k]), k))
    for k in order[:rest]:
        base[k] += 1
    return base.tolist()


@dataclass
class Split:
    """Target-day indices (0-based) per part; a sample at target day d uses days d-M .. d-1 as input."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def samples(self, part: str, regions: Sequence[str]) -> list[tuple[int, str]]:
        return [(int(d), r) for d in getattr(self, part) for r in regions]


def split_dataset(n_days: int, window: int, first_target_day: int = FIRST_TARGET_DAY,
                  weights: Sequence[float] = REFERENCE_SPLIT_DAYS) -> Split:
    """Chronological train/validation/test split of prediction days.

    The first target is ``first_target_day`` (1-based), pushed later if the
    input window would not fit. Remaining days are apportioned in order.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    first = max(first_target_day - 1, window)
    n = n_days - first
    if n_days < window + 3 or n < 3:
        raise ValueError(f"{n_days} days leave too few prediction days for window {window}")
    n_train, n_val, n_test = apportion(n, weights)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} prediction days leaves an empty part: {(n_train, n_val, n_test)}")
    days = np.arange(first, n_days)
    return Split(days[:n_train], days[n_train : n_train + n_val], days[n_train + n_val :])


def make_windows(counts: np.ndarray, target_days: Sequence[int], window: int) -> np.ndarray:
    """(B, I, M, C) input windows ending the day before each target."""
    counts = np.asarray(counts)
    out = np.stack([counts[d - window : d] for d in target_days]) if len(target_days) else \
        np.zeros((0, window) + counts.shape[1:], dtype=counts.dtype)
    return np.ascontiguousarray(out.transpose(0, 2, 1, 3))


def make_targets(counts: np.ndarray, target_days: Sequence[int]) -> np.ndarray:
    return binarize(np.asarray(counts)[list(target_days)])


@dataclass
class ModelConfig:
    window: int = 28
    state_dim: int = 128
    n_layers: int = 2
    instance_dim: int = 64
    attention_dim: int = 128
    log_input: bool = True
    top_k: int | None = 20
    include_self: bool = True
    lstm_only: bool = False

    def validate(self):
        for name in ("window", "state_dim", "n_layers", "instance_dim", "attention_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.top_k is not None and self.top_k < 0:
            raise ValueError("top_k must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    patience: int = 10
    batch_days: int = 8
    seed: int = 0
    threshold: float = 0.5


def new_model(config: ModelConfig, n_categories: int, feature_dims: dict[FactorKind, int],
              dtype=torch.float32):
    config.validate()
    if config.lstm_only:
        return LstmOnlyModel(n_categories, config.state_dim, config.n_layers, config.log_input, dtype)
    return MetaPathModel(n_categories, feature_dims, config.state_dim, config.n_layers,
                         config.instance_dim, config.attention_dim, config.log_input, dtype)


@dataclass
class Prepared:
    """Tensors for one dataset: graph inputs plus windows/targets per split part."""

    graph: GraphInputs
    split: Split
    windows: dict[str, torch.Tensor]
    targets: dict[str, torch.Tensor]
    days: dict[str, np.ndarray]

    @property
    def feature_dims(self) -> dict[FactorKind, int]:
        return {k: int(v.shape[1]) for k, v in self.graph.features.items()}


def prepare(dataset: Dataset, graph: Graph, config: ModelConfig, split: Split | None = None,
            first_target_day: int = FIRST_TARGET_DAY) -> Prepared:
    counts = dataset.tensor.counts
    if split is None:
        split = split_dataset(counts.shape[0], config.window, first_target_day)
    inputs = build_graph_inputs(graph.hin, graph.sims, dataset.profiles, dataset.geography.adjacency,
                                config.top_k, config.include_self)
    windows, targets, days = {}, {}, {}
    for part in ("train", "val", "test"):
        d = getattr(split, part)
        days[part] = d
        windows[part] = torch.as_tensor(make_windows(counts, d, config.window), dtype=torch.float64)
        targets[part] = torch.as_tensor(make_targets(counts, d), dtype=torch.float64)
    return Prepared(inputs, split, windows, targets, days)


def predict(model, windows: torch.Tensor, graph: GraphInputs, batch_days: int = 32):
    """Probabilities (B, I, C) and attention (B, A) or None, without gradients."""
    probs, betas = [], []
    with torch.no_grad():
        for s in range(0, windows.shape[0], batch_days):
            p, b = model(windows[s : s + batch_days].to(model.dtype), graph)
            probs.append(p)
            if b is not None:
                betas.append(b)
    if not probs:
        return torch.zeros(0), None
    return torch.cat(probs), (torch.cat(betas) if betas else None)


def mean_loss(model, windows, targets, graph, batch_days: int = 32) -> float:
    p, _ = predict(model, windows, graph, batch_days)
    return float(bce_loss(p, targets.to(p.dtype))) / max(targets.numel(), 1)


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def train(model, prepared: Prepared, config: TrainConfig) -> TrainResult:
    """Adam on the summed cross-entropy; keeps the parameters with the best validation loss.

    ``history`` holds one row per epoch with the mean per-entry loss; epoch 0
    is the untrained model.
    """
    gen = torch.Generator().manual_seed(config.seed)
    model.reset_parameters(gen)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    graph = prepared.graph.to(model.dtype)
    Xtr, Ytr = prepared.windows["train"], prepared.targets["train"]
    Xva, Yva = prepared.windows["val"], prepared.targets["val"]

    def val_loss():
        return mean_loss(model, Xva, Yva, graph) if len(Xva) else float("nan")

    history = [{"epoch": 0, "train_loss": mean_loss(model, Xtr, Ytr, graph), "val_loss": val_loss()}]
    best = history[0]["val_loss"]
    best_state = copy.deepcopy(model.state_dict())
    best_epoch, bad, stopped = 0, 0, False
    n = Xtr.shape[0]
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for s in range(0, n, config.batch_days):
            idx = order[s : s + config.batch_days]
            probs, _ = model(Xtr[idx].to(model.dtype), graph)
            loss = bce_loss(probs, Ytr[idx].to(model.dtype))
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {s}: {loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        model.eval()
        row = {"epoch": epoch, "train_loss": total / max(Ytr.numel(), 1), "val_loss": val_loss()}
        history.append(row)
        log.info("epoch %d train %.5f val %.5f", epoch, row["train_loss"], row["val_loss"])
        if not math.isfinite(row["train_loss"]):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
        if not (row["val_loss"] >= best):  # also true when best is nan
            best, best_epoch, bad = row["val_loss"], epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            bad += 1
            if config.patience and bad >= config.patience:
                stopped = True
                break
    model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, stopped)


# ---------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    macro_f1: float
    micro_f1: float
    macro_recall: float
    micro_recall: float
    f1: list[float]
    recall: list[float]
    threshold: float
    categories: list[str]
    no_positive: list[str] = field(default_factory=list)  # categories whose recall is 0 by convention
    confusion: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_table(self) -> str:
        width = max([len(c) for c in self.categories] + [12])
        lines = [f"{'category':<{width}}  {'f1':>6}  {'recall':>6}"]
        for c, f, r in zip(self.categories, self.f1, self.recall):
            flag = "  (no positives)" if c in self.no_positive else ""
            lines.append(f"{c:<{width}}  {f:6.3f}  {r:6.3f}{flag}")
        lines.append(f"{'macro':<{width}}  {self.macro_f1:6.3f}  {self.macro_recall:6.3f}")
        lines.append(f"{'micro':<{width}}  {self.micro_f1:6.3f}  {self.micro_recall:6.3f}")
        lines.append(f"threshold {self.threshold}")
        return "\n".join(lines)


def _f1(tp, fp, fn) -> float:
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else 0.0


def metrics_from_confusion(tp, fp, fn, categories=None, threshold: float = 0.5) -> MetricsReport:
    tp, fp, fn = (np.asarray(x, dtype=np.int64) for x in (tp, fp, fn))
    cats = list(categories) if categories is not None else [str(k) for k in range(tp.size)]
    recall = [float(t / (t + n)) if t + n else 0.0 for t, n in zip(tp, fn)]
    f1 = [_f1(t, p, n) for t, p, n in zip(tp, fp, fn)]
    TP, FP, FN = int(tp.sum()), int(fp.sum()), int(fn.sum())
    return MetricsReport(
        macro_f1=float(np.mean(f1)),
        micro_f1=_f1(TP, FP, FN),
        macro_recall=float(np.mean(recall)),
        micro_recall=TP / (TP + FN) if TP + FN else 0.0,
        f1=f1,
        recall=recall,
        threshold=threshold,
        categories=cats,
        no_positive=[c for c, t, n in zip(cats, tp, fn) if t + n == 0],
        confusion={"tp": tp.tolist(), "fp": fp.tolist(), "fn": fn.tolist()},
    )


def compute_metrics(probabilities, truth, threshold: float = 0.5, categories=None) -> MetricsReport:
    """Pooled per-category confusion over every (day, region) sample."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = np.asarray(probabilities)
    y = np.asarray(truth).astype(bool)
    C = p.shape[-1]
    pred = (p >= threshold).reshape(-1, C)
    y = y.reshape(-1, C)
    tp = (pred & y).sum(axis=0)
    fp = (pred & ~y).sum(axis=0)
    fn = (~pred & y).sum(axis=0)
    return metrics_from_confusion(tp, fp, fn, categories, threshold)


def evaluate(model, prepared: Prepared, threshold: float = 0.5, part: str = "test",
             categories=None) -> MetricsReport:
    probs, _ = predict(model, prepared.windows[part], prepared.graph)
    return compute_metrics(probs.double().numpy(), prepared.targets[part].numpy(), threshold, categories)


# ---------------------------------------------------------------- explanations


@dataclass
class AttentionTrace:
    kinds: list[FactorKind]
    days: list[str]
    beta: np.ndarray  # (D, A)

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for a, kind in enumerate(self.kinds):
            col = self.beta[:, a]
            out[kind.value] = {
                "mean": float(col.mean()),
                "min": float(col.min()),
                "median": float(np.median(col)),
                "max": float(col.max()),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day"] + [k.value for k in self.kinds])
        for d, row in zip(self.days, self.beta):
            w.writerow([d] + [f"{v:.9g}" for v in row])
        return buf.getvalue()

    def summary_table(self) -> str:
        lines = [f"{'factor':<14}{'mean':>10}{'min':>10}{'median':>10}{'max':>10}"]
        for name, s in self.summary().items():
            lines.append(f"{name:<14}{s['mean']:>10.4g}{s['min']:>10.4g}{s['median']:>10.4g}{s['max']:>10.4g}")
        return "\n".join(lines)


def explain(model, prepared: Prepared, part: str = "test", dates=None) -> AttentionTrace:
    if not isinstance(model, MetaPathModel):
        raise TypeError("attention explanations need the meta-path model")
    _, beta = predict(model, prepared.windows[part], prepared.graph)
    days = prepared.days[part]
    labels = [dates[d].isoformat() for d in days] if dates is not None else [str(int(d)) for d in days]
    return AttentionTrace(list(model.kinds), labels, beta.double().numpy())


def lstm_only_ablation(dataset: Dataset, graph: Graph, model_config: ModelConfig,
                       train_config: TrainConfig, prepared: Prepared | None = None) -> MetricsReport:
    """Train and score the temporal encoder + head alone on the same split."""
    cfg = replace(model_config, lstm_only=True)
    prepared = prepared or prepare(dataset, graph, cfg)
    model = new_model(cfg, len(dataset.categories), prepared.feature_dims)
    result = train(model, prepared, train_config)
    return evaluate(result.model, prepared, train_config.threshold, categories=dataset.categories)


# ---------------------------------------------------------------- checkpoints

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path: str | Path, model, model_config: ModelConfig, categories: Sequence[str],
                    regions: Sequence[str], extra: dict | None = None) -> Path:
    """Single zip archive: manifest.json plus one little-endian float32 .npy per parameter tensor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feature_dims = {k.value: v for k, v in getattr(model, "feature_dims", {}).items()}
    state = model.state_dict()
    manifest = {
        "format": "crimepath-checkpoint/1",
        "model_config": asdict(model_config),
        "feature_dims": feature_dims,
        "categories": list(categories),
        "regions": list(regions),
        "tensors": {k: list(v.shape) for k, v in state.items()},
        "extra": extra or {},
    }
    manifest["config_hash"] = config_hash({k: manifest[k] for k in ("model_config", "feature_dims", "categories")})
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("manifest.json", _ZIP_DATE), json.dumps(manifest, indent=2, sort_keys=True))
        for name, tensor in state.items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy().astype("<f4"), allow_pickle=False)
            info = zipfile.ZipInfo(f"tensors/{name}.npy", _ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())
    return path


def load_checkpoint(path: str | Path):
    """Returns (model, model_config, manifest); the model runs in float32."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        cfg = ModelConfig(**manifest["model_config"])
        dims = {FactorKind.parse(k): v for k, v in manifest["feature_dims"].items()}
        model = new_model(cfg, len(manifest["categories"]), dims)
        state = {}
        for name in manifest["tensors"]:
            arr = np.load(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False)
            state[name] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    return model, cfg, manifest
