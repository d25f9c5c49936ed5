"""Tests for stage orchestration, the run manifest and the command line."""
import json

import pytest
import yaml

from conftest import IMPUTATION_CONFIG
from run_pipeline import build_parser, main
from tools.evaluation_tools import SeedRunResult, results_frame
from tools.pipeline_tools import MANIFEST_NAME, run_all, run_stage
from utils.artifacts import read_json, write_csv
from utils.config import BudgetsConfig, ExplainConfig, PathsConfig, PipelineConfig, TPEConfig, load_pipeline_config
from utils.errors import StageError


def _config(work, n_donors=150) -> PipelineConfig:
    synth = work.parent / "synth.yaml"
    synth.write_text(yaml.safe_dump({"n_donors": n_donors, "seed": 4}))
    return PipelineConfig(
        paths=PathsConfig(cohort=str(work / "cohort.jsonl"), work_dir=str(work),
                          imputation_config=str(IMPUTATION_CONFIG), synth_config=str(synth)),
        families=["dt", "lr", "ensemble"],
        budgets=BudgetsConfig(selection_trials=4, population=2, inner_trials=1, inner_folds=2,
                              tpe_trials=3, tpe_folds=2, seeds=2),
        tpe=TPEConfig(n_startup=2, n_candidates=4),
        explain=ExplainConfig(background_size=20, n_permutations=2, max_samples=5),
        min_seed_success=0.5,
    )


def _write_metrics(work):
    results = [SeedRunResult(family, seed, f1=0.8 + 0.01 * seed, auc=0.7 + 0.02 * seed,
                             normed_mcc=0.6 + shift + 0.01 * seed)
               for family, shift in (("dt", 0.0), ("lr", 0.05)) for seed in range(3)]
    write_csv(work / "train" / "metrics.csv", results_frame(results))


def test_evaluate_skips_when_current(work_dir):
    _write_metrics(work_dir)
    config = _config(work_dir)
    outputs = run_stage("evaluate", config)
    assert work_dir / "evaluate" / "anova.csv" in outputs
    snapshot = {p.name: p.read_bytes() for p in outputs}

    again = run_stage("evaluate", config)
    manifest = read_json(work_dir / MANIFEST_NAME)
    assert len(manifest["entries"]) == 1
    assert sorted(p.name for p in again) == sorted(snapshot)

    forced = run_stage("evaluate", config, force=True)
    assert len(read_json(work_dir / MANIFEST_NAME)["entries"]) == 2
    assert {p.name: p.read_bytes() for p in forced} == snapshot
    entries = read_json(work_dir / MANIFEST_NAME)["entries"]
    assert entries[0]["outputs"] == entries[1]["outputs"]
    assert entries[0]["inputs"] == {"train/metrics.csv": entries[0]["inputs"]["train/metrics.csv"]}


def test_changed_input_reruns(work_dir):
    _write_metrics(work_dir)
    config = _config(work_dir)
    run_stage("evaluate", config)
    results = [SeedRunResult("dt", s, f1=0.5, auc=0.5, normed_mcc=0.5 + 0.01 * s) for s in range(3)]
    write_csv(work_dir / "train" / "metrics.csv", results_frame(results))
    run_stage("evaluate", config)
    assert len(read_json(work_dir / MANIFEST_NAME)["entries"]) == 2


def test_tampered_output_reruns(work_dir):
    _write_metrics(work_dir)
    config = _config(work_dir)
    run_stage("evaluate", config)
    (work_dir / "evaluate" / "summary.csv").write_text("tampered\n")
    run_stage("evaluate", config)
    assert len(read_json(work_dir / MANIFEST_NAME)["entries"]) == 2
    assert "tampered" not in (work_dir / "evaluate" / "summary.csv").read_text()


def test_missing_upstream_names_stage(work_dir):
    config = _config(work_dir)
    with pytest.raises(StageError, match="run engineer first") as info:
        run_stage("select", config)
    assert info.value.required_stage == "engineer"
    with pytest.raises(StageError, match="run train first"):
        run_stage("calibrate", config)
    with pytest.raises(StageError, match="unknown stage"):
        run_stage("deploy", config)


def test_report_stage_lists_gaps(work_dir):
    _write_metrics(work_dir)
    outputs = run_stage("report", _config(work_dir))
    assert work_dir / "report" / "report.md" in outputs
    assert "evaluation: not run" in (work_dir / "report" / "report.md").read_text()


def _write_config_file(tmp_path, work):
    config = _config(work)
    path = tmp_path / "pipeline.yaml"
    path.write_text(yaml.safe_dump(json.loads(config.model_dump_json())))
    return path


def test_cli_exit_codes(tmp_path, work_dir):
    path = _write_config_file(tmp_path, work_dir)
    assert main(["evaluate", "--config", str(path), "--log-level", "WARNING"]) == 2
    _write_metrics(work_dir)
    assert main(["evaluate", "--config", str(path), "--log-level", "WARNING"]) == 0
    assert main(["evaluate", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_cli_parser_and_overrides(tmp_path, work_dir, monkeypatch):
    args = build_parser().parse_args(["train", "--jobs", "3", "--seed", "9", "--full-budgets", "--force"])
    assert (args.stage, args.jobs, args.seed, args.full_budgets, args.force) == ("train", 3, 9, True, True)
    with pytest.raises(SystemExit):
        build_parser().parse_args(["deploy"])

    path = _write_config_file(tmp_path, work_dir)
    monkeypatch.setenv("BENCH_JOBS", "2")
    config = load_pipeline_config(str(path), seed=5, full_budgets=True)
    assert (config.jobs, config.master_seed) == (2, 5)
    assert (config.budgets.selection_trials, config.budgets.tpe_trials, config.budgets.seeds) == (1000, 300, 30)
    assert load_pipeline_config(str(path), jobs=4).jobs == 4


def test_invalid_pipeline_config():
    with pytest.raises(ValueError):
        PipelineConfig(families=["svm"])
    with pytest.raises(ValueError):
        PipelineConfig(stages={"deploy": True})
    with pytest.raises(ValueError):
        BudgetsConfig(population=1)


@pytest.mark.slow
def test_end_to_end_small_run(tmp_path):
    work = tmp_path / "run"
    config = _config(work)
    done = run_all(config)
    assert list(done) == ["synth", "engineer", "select", "tune", "train", "evaluate", "calibrate", "explain",
                          "report"]
    assert (work / "cohort.ground_truth.json").exists()
    assert (work / "select" / "dt" / "selected.json").exists()
    assert (work / "train" / "models" / "lr" / "seed_0.joblib").exists()
    assert (work / "explain" / "lr_beeswarm.csv").exists()
    assert read_json(work / MANIFEST_NAME)["entries"][-1]["stage"] == "report"
    metrics = (work / "train" / "metrics.csv").read_text()
    assert "ensemble" in metrics

    n_entries = len(read_json(work / MANIFEST_NAME)["entries"])
    run_all(config)
    assert len(read_json(work / MANIFEST_NAME)["entries"]) == n_entries

    other = tmp_path / "again"
    run_all(_config(other))
    for relative in ("train/metrics.csv", "engineer/train.csv", "calibrate/brier.csv"):
        assert (work / relative).read_bytes() == (other / relative).read_bytes()
