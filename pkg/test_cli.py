"""
Test the command line: single steps, the staged pipeline, error records and report consolidation.
"""

import json
from pathlib import Path

import pandas as pd
import pytest

from scissor.cli.schemas import PipelineConfig
from scissor.main import main

ROOT = Path(__file__).parent


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_reference_config_is_valid():
    config = PipelineConfig.model_validate_json((ROOT / "config" / "reference.json").read_text(encoding="utf-8"))
    assert config.stages[0] == "generate"
    assert config.n_tests == 1000


def test_rank_only_pipeline_on_the_fixture(tmp_path):
    out = tmp_path / "out"
    status = main(["pipeline", "--config", str(ROOT / "config" / "rank_fixture.json"),
                   "--out-dir", str(out), "--seed", "1"])
    assert status == 0
    for method in ("infogain", "correlation"):
        assert (out / f"ranking-{method}.json").exists()
        assert (out / f"ranking-{method}.csv").exists()
    ranking = read_json(out / "ranking-infogain.json")["ranking"]
    assert ranking["scores"][0]["feature"] == "min_radius"
    assert ranking["scores"][0]["selected"]
    manifest = read_json(out / "manifest.json")
    assert any(entry["path"].endswith("rank_fixture.csv") for entry in manifest["inputs"])


def test_missing_input_fails_the_stage(tmp_path):
    config = write_json(tmp_path / "pipeline.json", {"stages": ["rank"], "inputs": {"features": "missing.csv"}})
    out = tmp_path / "out"
    status = main(["pipeline", "--config", str(config), "--out-dir", str(out), "--seed", "1"])
    assert status == 3
    record = read_json(out / "error.json")
    assert record["status"] == "error"
    assert record["error"]["code"] == "StageFailure"
    assert record["error"]["stage"] == "rank"
    assert "missing.csv" in record["error"]["path"]


def test_unknown_config_key_is_refused(tmp_path):
    config = write_json(tmp_path / "pipeline.json", {"stages": ["rank"], "n_test": 10})
    status = main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / "out"), "--seed", "1"])
    assert status == 2
    assert read_json(tmp_path / "out" / "error.json")["error"]["code"] == "ConfigInvalid"


def test_seed_is_required(tmp_path):
    with pytest.raises(SystemExit):
        main(["generate", "--n", "5", "--out", str(tmp_path / "tests.json")])


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """Run the single-step commands one after another on a small corpus."""
    d = tmp_path_factory.mktemp("chain")
    generator = write_json(d / "generator.json", {"segments_max": 8})
    experiments = write_json(d / "experiments.json", {"compositions": [[0.6, 0.4]]})
    steps = [
        ["generate", "--count", "60", "--config", str(generator), "--out", str(d / "tests.json")],
        ["label", "--tests", str(d / "tests.json"), "--driver", "moderate", "--out", str(d / "labeled.json")],
        ["extract", "--labeled", str(d / "labeled.json"), "--set", "full", "--out", str(d / "features.csv")],
        ["train", "--features", str(d / "features.csv"), "--model", "logistic", "--out", str(d / "model.json")],
        ["eval", "--model", str(d / "model.json"), "--features", str(d / "features.csv"),
         "--report", str(d / "eval.json")],
        ["rank", "--features", str(d / "features.csv"), "--out", str(d / "ranking.json")],
        ["pools", "--labeled", str(d / "labeled.json"), "--config", str(experiments),
         "--out-dir", str(d / "pools")],
        ["fix", "--pool", str(d / "pools" / "pool-60-40.json"), "--oracle", "--suite-size", "5",
         "--reps", "3", "--out", str(d / "fix.json")],
        ["reach", "--pool", str(d / "pools" / "pool-60-40.json"), "--model", str(d / "model.json"),
         "--n", "3", "--reps", "3", "--out", str(d / "reach.json")],
        ["report", "--inputs", str(d / "fix.json"), str(d / "reach.json"), "--out", str(d / "summary")],
    ]
    for argv in steps:
        assert main(argv + ["--seed", "4"]) == 0, argv[0]
    return d


def test_every_step_leaves_a_manifest(chain):
    for name in ("tests.json", "labeled.json", "features.csv", "model.json", "eval.json", "ranking.json",
                 "fix.json", "reach.json", "summary.json"):
        manifest = read_json(chain / f"{name}.manifest.json")
        assert manifest["seed"] == 4
        assert manifest["outputs"]
    assert (chain / "pools" / "pools.manifest.json").exists()


def test_eval_file_counts_every_row(chain):
    evaluation = read_json(chain / "eval.json")
    features = pd.read_csv(chain / "features.csv")
    report = evaluation["report"]
    assert report["tp"] + report["fp"] + report["tn"] + report["fn"] == len(features)
    assert evaluation["data_provenance"] == "moderate"


def test_report_means_average_the_repetitions(chain):
    frame = pd.read_csv(chain / "summary.csv")
    assert list(frame.columns[:5]) == ["experiment", "strategy", "pool", "repetition", "row_type"]
    assert set(frame["experiment"]) == {"fix", "reach"}
    fix = frame[frame["experiment"] == "fix"]
    assert set(fix["strategy"]) == {"baseline", "oracle"}
    for strategy, part in fix.groupby("strategy"):
        reps = part[part["row_type"] == "repetition"]
        mean = part[part["row_type"] == "mean"]
        assert len(reps) == 3 and len(mean) == 1
        for column in ("executed", "executed_unsafe", "unsafe_ratio", "time_unsafe"):
            assert mean[column].iloc[0] == pytest.approx(reps[column].mean())
    sections = read_json(chain / "summary.json")
    assert list(sections) == ["fix", "reach"]


def test_report_refuses_other_schema_versions(tmp_path, chain):
    stale = read_json(chain / "fix.json")
    stale["schema_version"] = 9
    path = write_json(tmp_path / "stale.json", stale)
    status = main(["report", "--inputs", str(path), "--out", str(tmp_path / "summary"), "--seed", "4"])
    assert status == 1
    assert read_json(tmp_path / "error.json")["error"]["code"] == "SchemaMismatch"


def test_pipeline_is_reproducible(tmp_path):
    config = write_json(tmp_path / "small.json", {
        "n_tests": 150,
        "generator": {"segments_max": 6},
        "experiments": {"suite_size": 5, "reach_n": 3, "reps": 3, "compositions": [[0.6, 0.4], [0.3, 0.7]]},
        "realtime": {"budget_s": 400.0},
    })
    for name in ("a", "b"):
        assert main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / name), "--seed", "12"]) == 0
    first = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    second = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert first == second
    assert Path("manifest.json") in first and Path("realtime.json") in first
    for rel in first:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_study_writes_one_row_per_model_and_fraction(tmp_path, chain):
    out = tmp_path / "study.json"
    status = main(["study", "--labeled", str(chain / "labeled.json"), "--models", "logistic", "majority",
                   "--fractions", "0.5", "0.8", "--out", str(out), "--seed", "4"])
    assert status == 0
    rows = read_json(out)["rows"]
    assert [(r["kind"], r["protocol"]) for r in rows] == [
        ("logistic", "split-0.5"), ("logistic", "split-0.8"), ("majority", "split-0.5"), ("majority", "split-0.8")]
    assert len(pd.read_csv(out.with_suffix(".csv"))) == 4


def test_count_and_set_spellings_match_the_short_ones(tmp_path):
    assert main(["generate", "--count", "8", "--out", str(tmp_path / "a.json"), "--seed", "3"]) == 0
    assert main(["generate", "--n", "8", "--out", str(tmp_path / "b.json"), "--seed", "3"]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert len(read_json(tmp_path / "a.json")) == 8
    assert main(["label", "--tests", str(tmp_path / "a.json"), "--out", str(tmp_path / "labeled.json"),
                 "--seed", "3"]) == 0
    for flag, name in (("--set", "set.csv"), ("--features", "features.csv")):
        assert main(["extract", "--labeled", str(tmp_path / "labeled.json"), flag, "segment",
                     "--out", str(tmp_path / name), "--seed", "3"]) == 0
    assert (tmp_path / "set.csv").read_bytes() == (tmp_path / "features.csv").read_bytes()
    assert "prev_angle" in pd.read_csv(tmp_path / "set.csv").columns
