"""Tests for the report bundle rendered from stage artifacts."""
import pandas as pd
import pytest

from tools.evaluation_tools import SeedRunResult, results_frame
from tools.report_tools import model_order, render_report
from tools.stats_tools import tukey_hsd
from utils.artifacts import write_csv, write_json
from utils.errors import StageError


def _write_metrics(work):
    results = [SeedRunResult(family, seed, f1=0.80 + 0.01 * seed + shift, auc=0.70 + shift,
                             normed_mcc=0.60 + 0.02 * seed + shift)
               for family, shift in (("lr", 0.0), ("rf", 0.05), ("ensemble", 0.03)) for seed in range(3)]
    write_csv(work / "train" / "metrics.csv", results_frame(results))
    return results


def test_report_needs_training(work_dir):
    with pytest.raises(StageError, match="run train first"):
        render_report(work_dir)


def test_missing_stages_listed_as_gaps(work_dir):
    _write_metrics(work_dir)
    bundle = render_report(work_dir)
    assert bundle.gaps == ["evaluation: not run", "calibration: not run", "explain: not run"]
    names = {p.name for p in bundle.files}
    assert {"metric_table.csv", "boxplot_f1.svg", "boxplot_auc.svg", "boxplot_normed_mcc.svg", "report.md"} <= names
    text = (work_dir / "report" / "report.md").read_text()
    assert "- calibration: not run" in text
    table = pd.read_csv(work_dir / "report" / "metric_table.csv")
    assert table["model"].tolist() == ["lr", "rf", "ensemble"]


def test_full_bundle(work_dir):
    _write_metrics(work_dir)
    groups = {"lr": [0.60, 0.62, 0.64], "rf": [0.65, 0.67, 0.69]}
    write_csv(work_dir / "evaluate" / "anova.csv", pd.DataFrame([{"metric": "f1", "F": 1.0, "p": 0.4}]))
    for metric in ("f1", "auc", "normed_mcc"):
        write_json(work_dir / "evaluate" / f"tukey_{metric}.json", tukey_hsd(groups).to_dict())
    write_csv(work_dir / "calibrate" / "brier.csv", pd.DataFrame(
        [{"model": "lr", "seed": 2, "uncalibrated": 0.15, "platt": 0.14, "isotonic": 0.13}]))
    write_csv(work_dir / "calibrate" / "ece.csv", pd.DataFrame(
        [{"model": "lr", "seed": 2, "uncalibrated": 0.0812, "platt": 0.0431, "isotonic": 0.0277}]))
    write_csv(work_dir / "calibrate" / "brier_decomposition.csv", pd.DataFrame(
        [{"model": "lr", "method": "platt", "brier": 0.14, "calibration": 0.01, "refinement": 0.13,
          "within_variance": 0.0, "within_covariance": 0.0}]))
    write_csv(work_dir / "calibrate" / "reliability.csv", pd.DataFrame(
        [{"model": "lr", "method": m, "bin": b, "mean_pred": 0.1 * b + 0.05, "frac_pos": 0.1 * b, "count": 5}
         for m in ("uncalibrated", "platt", "isotonic") for b in range(10)]))
    write_csv(work_dir / "explain" / "lr_shap_global.csv", pd.DataFrame(
        {"feature": ["age", "creatinine__slope"], "mean_abs_shap": [0.08, 0.05], "std_abs_shap": [0.02, 0.01]}))
    write_csv(work_dir / "explain" / "lr_beeswarm.csv", pd.DataFrame(
        [{"sample_id": f"D{i}", "feature": f, "phi": 0.01 * i * (1 if f == "age" else -1), "value": 40.0 + i}
         for i in range(4) for f in ("age", "creatinine__slope")]))

    bundle = render_report(work_dir, top_k=2)
    assert bundle.gaps == []
    names = {p.name for p in bundle.files}
    assert {"tukey_f1.svg", "tukey_f1.csv", "brier_table.csv", "ece_table.csv", "brier_decomposition.csv",
            "calibration_lr.svg", "shap_bar_lr.svg", "shap_beeswarm_lr.svg"} <= names
    text = (work_dir / "report" / "report.md").read_text()
    assert "Expected calibration error" in text
    assert "0.0431" in text
    assert "Brier decomposition" in text
    assert "Top features: age, creatinine__slope" in text
    assert "Gaps" not in text


def test_svgs_byte_stable(tmp_path):
    for name in ("a", "b"):
        _write_metrics(tmp_path / name)
        render_report(tmp_path / name)
    first = (tmp_path / "a" / "report" / "boxplot_normed_mcc.svg").read_bytes()
    assert first == (tmp_path / "b" / "report" / "boxplot_normed_mcc.svg").read_bytes()


def test_model_order():
    assert model_order(["ensemble", "zz", "lr", "dt"]) == ["dt", "lr", "ensemble", "zz"]
