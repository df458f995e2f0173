import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from filelock import FileLock

from crimepath.cli import main
from crimepath.similarity import SimilarityMatrix
from crimepath.features import FactorKind

SMALL = ["--set", "model.window=5", "--set", "model.state_dim=4", "--set", "model.instance_dim=4",
         "--set", "model.attention_dim=4", "--set", "first_target_day=1"]

TAXONOMY = {
    "Ethnics": {"race": ["White", "Black"]},
    "Income": {"household_income": ["income_mean"]},
    "Job": {"occupation": ["Office", "Service"]},
    "Commuting": {"mode": ["Drive", "Transit"]},
    "Urbanization": {"educational": ["Elementary School", "High School"], "recreational": ["Zoo", "Pool"]},
}
POI = {"r1": [2, 2, 5, 5], "r2": [2, 2, 0, 10], "r3": [0, 0, 5, 5]}


def _square(k):
    x0, y0, s = -74.0 + 0.01 * k, 40.7, 0.01
    return [[[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s], [x0, y0]]]


def write_city(root: Path, negative=False):
    root.mkdir(parents=True, exist_ok=True)
    feats = [{"type": "Feature", "properties": {"region": r}, "geometry": {"type": "Polygon", "coordinates": _square(k)}}
             for k, r in enumerate(POI)]
    (root / "regions.geojson").write_text(json.dumps({"type": "FeatureCollection", "features": feats}))
    (root / "taxonomy.yaml").write_text(yaml.safe_dump(TAXONOMY, sort_keys=False))
    census = ["tract,district,population,White,Black,income_mean,Office,Service,Drive,Transit"]
    for k, r in enumerate(POI):
        census.append(f"{k}a,{r},100,{50 + k},{20},{30000 + 10000 * k},{-30 if negative and k == 1 else 10},5,7,3")
        census.append(f"{k}b,{r},300,{10},{40 + k},{50000 + 10000 * k},4,6,2,9")
    (root / "census.csv").write_text("\n".join(census) + "\n")
    names = [f for sub in TAXONOMY["Urbanization"].values() for f in sub]
    poi = ["category,lat,lon"]
    for k, (r, counts) in enumerate(POI.items()):
        for name, n in zip(names, counts):
            for m in range(n):
                poi.append(f"{name},{40.7 + 0.001 + 0.0008 * m},{-74.0 + 0.01 * k + 0.002 + 0.0007 * names.index(name)}")
    (root / "poi.csv").write_text("\n".join(poi) + "\n")
    rng = np.random.default_rng(0)
    crime = ["date,region,category"]
    for d in range(1, 31):
        for r in POI:
            if rng.random() < 0.5:
                crime.append(f"2015-01-{d:02d},{r},{rng.choice(['ROBBERY', 'Burglary'])}")
    crime.append("2015-01-03,r9,Burglary")  # unknown region, skipped
    (root / "crime.csv").write_text("\n".join(crime) + "\n")
    cfg = {
        "data": {"crime": "crime.csv", "census": "census.csv", "poi": "poi.csv", "regions": "regions.geojson",
                 "taxonomy": "taxonomy.yaml", "start": "2015-01-01", "end": "2015-01-30",
                 "categories": {"Robbery": ["ROBBERY"], "Burglary": []}},
        "hin": {"strategies": {"Urbanization": "single"}},
    }
    (root / "config.yaml").write_text(yaml.safe_dump(cfg))
    return root / "config.yaml"


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def city(tmp_path):
    return write_city(tmp_path / "raw")


def _tree(path: Path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_ingest_fixture(city, tmp_path):
    out = tmp_path / "ws"
    assert run("ingest", "--config", city, "--out", out) == 0
    bundle = out / "bundle"
    for name in ("manifest.json", "crime_counts.csv", "profiles.csv", "adjacency.csv", "effective_config.yaml"):
        assert (bundle / name).exists()
    report = json.loads((bundle / "ingest_report.json").read_text())
    assert report["crime"]["skipped"] == {"unknown region": 1}
    manifest = json.loads((bundle / "manifest.json").read_text())
    assert manifest["regions"] == ["r1", "r2", "r3"]


def test_reingest_is_byte_identical(city, tmp_path):
    assert run("ingest", "--config", city, "--out", tmp_path / "a") == 0
    assert run("ingest", "--config", city, "--out", tmp_path / "b") == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_ingest_missing_file(city, tmp_path):
    (city.parent / "poi.csv").unlink()
    assert run("ingest", "--config", city, "--out", tmp_path / "ws") == 2


def test_ingest_invalid_profile(tmp_path):
    cfg = write_city(tmp_path / "raw", negative=True)
    assert run("ingest", "--config", cfg, "--out", tmp_path / "ws") == 2
    report = json.loads((tmp_path / "ws" / "bundle" / "ingest_report.json").read_text())
    assert len(report["violations"]) == 1


def test_build_matches_golden_similarity(city, tmp_path):
    out = tmp_path / "ws"
    assert run("ingest", "--config", city, "--out", out) == 0
    assert run("build", "--config", city, "--out", out) == 0
    first = _tree(out / "graph")
    sm = SimilarityMatrix.from_csv(FactorKind.URBANIZATION, (out / "graph" / "similarity_RUR.csv").read_text())
    assert sm["r1", "r2"] == pytest.approx(0.833, abs=1e-3)
    assert sm["r1", "r3"] == pytest.approx(0.5, abs=1e-3)
    assert run("build", "--config", city, "--out", out) == 0
    assert _tree(out / "graph") == first


def test_full_pipeline_zero_epochs(city, tmp_path):
    out = tmp_path / "ws"
    for cmd in ("ingest", "build", "train", "evaluate", "explain"):
        assert run(cmd, "--config", city, "--out", out, "--set", "train.epochs=0", *SMALL) == 0, cmd
    log = json.loads((out / "train" / "training_log.json").read_text())
    assert [r["epoch"] for r in log["history"]] == [0]
    metrics = json.loads((out / "eval" / "metrics.json").read_text())
    assert set(metrics["categories"]) == {"Robbery", "Burglary"}
    header = (out / "explain" / "attention_trace.csv").read_text().splitlines()[0]
    assert header.startswith("day,")


def test_commands_need_previous_stage(tmp_path):
    assert run("build", "--out", tmp_path / "ws") == 2
    assert run("train", "--out", tmp_path / "ws") == 2


def test_bad_override(tmp_path):
    assert run("synth", "--out", tmp_path / "ws", "--set", "train.threshold=2") == 2
    assert run("synth", "--out", tmp_path / "ws", "--set", "model.nonsense=1") == 2
    assert run("build", "--out", tmp_path / "ws", "--set", "hin.strategies={Income: nearest}") == 2


def test_busy_workspace(tmp_path):
    out = tmp_path / "ws"
    out.mkdir()
    with FileLock(str(out / ".crimepath.lock")):
        assert run("synth", "--out", out) == 1


def test_synth_pipeline(tmp_path):
    out = tmp_path / "ws"
    args = ["--out", out, "--set", "synthetic.n_days=40", "--set", "synthetic.n_regions=6",
            "--set", "train.epochs=2", *SMALL]
    for cmd in ("synth", "build", "train", "evaluate", "explain"):
        assert run(cmd, *args) == 0, cmd
    summary = json.loads((out / "explain" / "attention_summary.json").read_text())
    assert set(summary) == {"Ethnics", "Income", "Job", "Commuting", "Urbanization", "Geographic"}
    # same seed, same checkpoint bytes
    first = (out / "train" / "checkpoint.zip").read_bytes()
    assert run("train", *args) == 0
    assert (out / "train" / "checkpoint.zip").read_bytes() == first


def test_explain_refuses_lstm_only(tmp_path):
    out = tmp_path / "ws"
    args = ["--out", out, "--set", "synthetic.n_days=30", "--set", "synthetic.n_regions=4",
            "--set", "train.epochs=0", "--set", "model.lstm_only=true", *SMALL]
    for cmd in ("synth", "build", "train"):
        assert run(cmd, *args) == 0
    assert run("explain", *args) == 2
