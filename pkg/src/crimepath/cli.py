"""Batch entry point: ingest | synth | build | train | evaluate | explain.

All commands share one output workspace (``--out``):

    <out>/bundle/   dataset bundle (ingest or synth)
    <out>/graph/    network edge list and similarity matrices (build)
    <out>/train/    checkpoint and training log (train)
    <out>/eval/     metrics (evaluate)
    <out>/explain/  attention trace and summary (explain)

Exit codes: 0 success, 1 runtime failure, 2 input or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import date
from pathlib import Path

import numpy as np
import torch
from filelock import FileLock, Timeout

from . import synthetic
from .config import ConfigError, RunConfig, load_config
from .dataset import Dataset, build_graph, read_bundle, read_graph, sha256_file, write_bundle, write_graph
from .features import load_taxonomy, validate_profiles
from .ingest import (
    IngestError,
    Period,
    assemble_profiles,
    build_crime_tensor,
    centroid_latlon,
    compute_geography,
    load_census,
    load_crime_events,
    load_poi,
    load_region_geometry,
)
from .training import (
    TrainingDiverged,
    evaluate,
    explain,
    load_checkpoint,
    new_model,
    prepare,
    save_checkpoint,
    train,
)

log = logging.getLogger("crimepath")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _echo_config(cfg: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.yaml").write_text(cfg.dump())


def _require(path: Path, what: str):
    if not path.exists():
        raise InputError(f"missing {what}: {path}")


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_ingest(cfg: RunConfig, out: Path) -> int:
    d = cfg.data
    for key in ("crime", "census", "poi", "regions"):
        value = getattr(d, key)
        if not value:
            raise InputError(f"data.{key} is not configured")
        _require(Path(value), f"data.{key}")
    taxonomy = load_taxonomy(d.taxonomy)
    period = Period(date.fromisoformat(d.start), date.fromisoformat(d.end))
    geometry = load_region_geometry(d.regions, d.region_id_property)
    regions = list(geometry)

    categories = list(d.categories)
    category_map = {}
    for idx, (name, aliases) in enumerate(d.categories.items()):
        for label in [name, *(aliases or [])]:
            category_map[label] = idx
    events, crime_report = load_crime_events(d.crime, category_map, regions, period)
    tensor = build_crime_tensor(events, regions, period, categories)

    mapping = None
    if d.tract_map:
        _require(Path(d.tract_map), "data.tract_map")
        with open(d.tract_map, newline="") as fh:
            mapping = {row["tract"]: row["district"] for row in csv.DictReader(fh)}
    census, census_report = load_census(d.census, taxonomy, mapping)
    poi, poi_report = load_poi(d.poi, taxonomy, regions, geometry)

    profiles = assemble_profiles(regions, census, poi, taxonomy, geometry,
                                 {r: centroid_latlon(g) for r, g in geometry.items()})
    violations = validate_profiles(profiles, taxonomy)
    bundle_dir = out / "bundle"
    bundle_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "crime": crime_report.to_dict(),
        "census": census_report.to_dict(),
        "poi": poi_report.to_dict(),
        "violations": [str(v) for v in violations],
    }
    _write_json(bundle_dir / "ingest_report.json", report)
    if violations:
        for v in violations:
            log.error("invalid profile: %s", v)
        return EXIT_INPUT

    geography = compute_geography(profiles, d.adjacency_km)
    sources = {key: sha256_file(getattr(d, key)) for key in ("crime", "census", "poi", "regions")}
    if d.taxonomy:
        sources["taxonomy"] = sha256_file(d.taxonomy)
    write_bundle(Dataset(tensor, profiles, taxonomy, geography, sources), bundle_dir)
    _echo_config(cfg, bundle_dir)
    log.info("bundle: %d days x %d regions x %d categories (%d events, %d rows skipped)",
             *tensor.shape, len(events), crime_report.total)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    city = synthetic.generate(cfg.synthetic)
    bundle_dir = out / "bundle"
    write_bundle(city.dataset, bundle_dir)
    _echo_config(cfg, bundle_dir)
    return EXIT_OK


def _load_bundle(out: Path) -> Dataset:
    _require(out / "bundle" / "manifest.json", "dataset bundle (run ingest or synth first)")
    return read_bundle(out / "bundle")


def cmd_build(cfg: RunConfig, out: Path) -> int:
    dataset = _load_bundle(out)
    graph = build_graph(dataset, cfg.hin)
    graph_dir = write_graph(graph, out / "graph")
    _echo_config(cfg, graph_dir)
    counts = {k.metapath: len(v) for k, v in graph.hin.bins.items()}
    _write_json(graph_dir / "summary.json", {"bin_nodes": counts, "n_regions": len(graph.hin.regions)})
    return EXIT_OK


def _load_graph(out: Path):
    _require(out / "graph" / "edges.tsv", "network outputs (run build first)")
    return read_graph(out / "graph")


def cmd_train(cfg: RunConfig, out: Path) -> int:
    dataset = _load_bundle(out)
    graph = _load_graph(out)
    prepared = prepare(dataset, graph, cfg.model, first_target_day=cfg.first_target_day)
    model = new_model(cfg.model, len(dataset.categories), prepared.feature_dims)
    tc = cfg.train
    tc.seed = cfg.seed
    result = train(model, prepared, tc)
    train_dir = out / "train"
    train_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(train_dir / "checkpoint.zip", result.model, cfg.model, dataset.categories,
                    dataset.regions, {"best_epoch": result.best_epoch, "seed": cfg.seed})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for row in result.history:
        w.writerow([row["epoch"], f"{row['train_loss']:.8g}", f"{row['val_loss']:.8g}"])
    (train_dir / "training_log.csv").write_text(buf.getvalue())
    _write_json(train_dir / "training_log.json", {
        "history": result.history, "best_epoch": result.best_epoch, "stopped_early": result.stopped_early,
    })
    _echo_config(cfg, train_dir)
    return EXIT_OK


def _load_trained(out: Path, cfg: RunConfig):
    _require(out / "train" / "checkpoint.zip", "checkpoint (run train first)")
    model, model_cfg, manifest = load_checkpoint(out / "train" / "checkpoint.zip")
    dataset = _load_bundle(out)
    graph = _load_graph(out)
    if manifest["regions"] != dataset.regions or manifest["categories"] != dataset.categories:
        raise InputError("checkpoint was trained on a different dataset")
    prepared = prepare(dataset, graph, model_cfg, first_target_day=cfg.first_target_day)
    return model, dataset, prepared


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    model, dataset, prepared = _load_trained(out, cfg)
    report = evaluate(model, prepared, cfg.train.threshold, categories=dataset.categories)
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    _write_json(eval_dir / "metrics.json", report.to_dict())
    (eval_dir / "metrics.txt").write_text(report.to_table() + "\n")
    _echo_config(cfg, eval_dir)
    print(report.to_table())
    return EXIT_OK


def cmd_explain(cfg: RunConfig, out: Path) -> int:
    model, dataset, prepared = _load_trained(out, cfg)
    if getattr(model, "kinds", None) == []:
        raise InputError("the checkpoint is the LSTM-only ablation; it has no attention weights")
    trace = explain(model, prepared, dates=dataset.tensor.dates)
    exp_dir = out / "explain"
    exp_dir.mkdir(parents=True, exist_ok=True)
    (exp_dir / "attention_trace.csv").write_text(trace.to_csv())
    _write_json(exp_dir / "attention_summary.json", trace.summary())
    (exp_dir / "attention_summary.txt").write_text(trace.summary_table() + "\n")
    _echo_config(cfg, exp_dir)
    print(trace.summary_table())
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "build": cmd_build,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crimepath", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", required=True, help="output workspace directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set train.epochs=5")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)
    lock = FileLock(str(out / ".crimepath.lock"))
    try:
        with lock.acquire(timeout=0):
            return COMMANDS[args.command](cfg, out)
    except Timeout:
        print(f"error: another command is running in {out}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InputError, ConfigError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 1
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
