"""
Report rendering: metric table, boxplots, Tukey heatmaps, calibration
curves and SHAP charts, all drawn from the CSV/JSON artifacts of earlier
stages. Missing stages become listed gaps instead of errors.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from jinja2 import Environment, FileSystemLoader, StrictUndefined  # noqa: E402

from tools.evaluation_tools import summary_table  # noqa: E402
from tools.metric_tools import METRICS  # noqa: E402
from tools.shap_tools import GlobalImportance, beeswarm_arrays, render_beeswarm, render_importance_bar  # noqa: E402
from tools.stats_tools import TukeyTable  # noqa: E402
from utils.artifacts import read_json, write_csv  # noqa: E402
from utils.errors import StageError  # noqa: E402
from utils.logging import get_logger  # noqa: E402

logger = get_logger(__name__)

# fixed ids and no timestamps keep SVG bytes stable across runs
matplotlib.rcParams["svg.hashsalt"] = "donor-discard-bench"
matplotlib.rcParams["svg.fonttype"] = "path"

FAMILY_ORDER = ["dt", "lr", "rf", "xgb", "mlp", "ensemble"]
METRIC_LABELS = {"f1": "F1", "auc": "AUC", "normed_mcc": "normed MCC"}
CALIBRATION_METHODS = ("uncalibrated", "platt", "isotonic")
TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "config" / "templates"
TEMPLATE_NAME = "report.md.j2"


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return path


def model_order(models: Sequence[str]) -> List[str]:
    known = [m for m in FAMILY_ORDER if m in models]
    return known + sorted(m for m in models if m not in FAMILY_ORDER)


def render_boxplot(metrics: pd.DataFrame, metric: str, path: Union[str, Path],
                   order: Optional[Sequence[str]] = None) -> Path:
    """Per-model distribution of one test metric over seeds."""
    subset = metrics[metrics["metric"] == metric]
    models = list(order or model_order(subset["model"].unique()))
    data = [subset.loc[subset["model"] == m, "value"].to_numpy() for m in models]
    fig, ax = plt.subplots(figsize=(1.1 * len(models) + 2, 4))
    ax.boxplot(data, showmeans=True)
    ax.set_xticks(range(1, len(models) + 1), [m.upper() for m in models])
    ax.set_ylabel(METRIC_LABELS.get(metric, metric))
    ax.set_title(f"Test {METRIC_LABELS.get(metric, metric)} over seeds")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def render_tukey_heatmap(table: TukeyTable, path: Union[str, Path], title: str = "") -> Path:
    """Lower-triangle heatmap of Tukey-adjusted p-values; significant cells are starred."""
    matrix = table.p_matrix()
    k = len(table.groups)
    fig, ax = plt.subplots(figsize=(0.9 * k + 2, 0.9 * k + 1))
    image = ax.imshow(np.ma.masked_invalid(matrix), cmap="viridis_r", vmin=0.0, vmax=1.0)
    for i in range(k):
        for j in range(i):
            mark = "*" if matrix[i, j] < table.alpha else ""
            ax.text(j, i, f"{matrix[i, j]:.3f}{mark}", ha="center", va="center", fontsize=8, color="white")
    labels = [g.upper() for g in table.groups]
    ax.set_xticks(range(k), labels)
    ax.set_yticks(range(k), labels)
    ax.set_title(title)
    fig.colorbar(image, ax=ax, label="adjusted p")
    return _save(fig, path)


def render_calibration_curves(curves: pd.DataFrame, path: Union[str, Path], title: str = "") -> Path:
    """Reliability curves of one model, one line per calibration method."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
    for method in CALIBRATION_METHODS:
        sub = curves[curves["method"] == method]
        if not sub.empty:
            ax.plot(sub["mean_pred"], sub["frac_pos"], marker="o", label=method)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("mean predicted probability")
    ax.set_ylabel("fraction transplanted")
    ax.set_title(title)
    ax.legend(loc="upper left")
    return _save(fig, path)


@dataclass
class ReportBundle:
    """Files written by render_report and the stages it could not draw from."""

    directory: Path
    files: List[Path] = field(default_factory=list)
    gaps: List[str] = field(default_factory=list)


def _frame_markdown(frame: pd.DataFrame, digits: int = 4) -> str:
    header = "| " + " | ".join(frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    rows = []
    for _, row in frame.iterrows():
        cells = [f"{v:.{digits}f}" if isinstance(v, float) else str(v) for v in row]
        rows.append("| " + " | ".join(cells) + " |")
    return "\n".join([header, rule, *rows])


def render_report(work_dir: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
                  top_k: int = 10) -> ReportBundle:
    """
    Render the report bundle from stage artifacts under work_dir.

    Args:
        work_dir: Pipeline work directory
        out_dir: Output directory (default: work_dir/report)
        top_k: Features shown in SHAP charts

    Returns:
        ReportBundle listing every written file and every gap

    Raises:
        StageError: If no training metrics exist
    """
    work = Path(work_dir)
    out = Path(out_dir) if out_dir else work / "report"
    metrics_path = work / "train" / "metrics.csv"
    if not metrics_path.exists():
        raise StageError("report needs trained models: run train first", required_stage="train")
    bundle = ReportBundle(out)
    context: Dict[str, object] = {}

    metrics = pd.read_csv(metrics_path)
    order = model_order(metrics["model"].unique())
    summary = summary_table(metrics, order)
    bundle.files.append(write_csv(out / "metric_table.csv", summary))
    context["metric_table"] = _frame_markdown(summary.rename(
        columns={m: METRIC_LABELS[m] for m in METRICS}).drop(columns=[f"{m}_std" for m in METRICS]))
    context["boxplots"] = []
    for metric in METRICS:
        bundle.files.append(render_boxplot(metrics, metric, out / f"boxplot_{metric}.svg", order))
        context["boxplots"].append({"metric": METRIC_LABELS[metric], "file": f"boxplot_{metric}.svg"})

    evaluate_dir = work / "evaluate"
    context.update(tukey=[], anova=None)
    if (evaluate_dir / "anova.csv").exists():
        anova = pd.read_csv(evaluate_dir / "anova.csv")
        context["anova"] = _frame_markdown(anova)
        for metric in METRICS:
            path = evaluate_dir / f"tukey_{metric}.json"
            if not path.exists():
                bundle.gaps.append(f"tukey {metric}: not run")
                continue
            table = TukeyTable.from_dict(read_json(path))
            bundle.files.append(write_csv(out / f"tukey_{metric}.csv", table.to_frame()))
            bundle.files.append(render_tukey_heatmap(table, out / f"tukey_{metric}.svg",
                                                     f"Tukey HSD, {METRIC_LABELS[metric]}"))
            context["tukey"].append({"metric": METRIC_LABELS[metric], "file": f"tukey_{metric}.svg",
                                     "n_pairs": len(table.pairs),
                                     "n_significant": sum(p.significant for p in table.pairs)})
    else:
        bundle.gaps.append("evaluation: not run")

    calibrate_dir = work / "calibrate"
    context.update(calibration_curves=[], brier_table=None, ece_table=None, decomposition_table=None)
    if (calibrate_dir / "brier.csv").exists():
        brier = pd.read_csv(calibrate_dir / "brier.csv")
        bundle.files.append(write_csv(out / "brier_table.csv", brier))
        context["brier_table"] = _frame_markdown(brier)
        if (calibrate_dir / "ece.csv").exists():
            ece = pd.read_csv(calibrate_dir / "ece.csv")
            bundle.files.append(write_csv(out / "ece_table.csv", ece))
            context["ece_table"] = _frame_markdown(ece)
        else:
            bundle.gaps.append("calibration ece: not run")
        if (calibrate_dir / "brier_decomposition.csv").exists():
            decomposition = pd.read_csv(calibrate_dir / "brier_decomposition.csv")
            bundle.files.append(write_csv(out / "brier_decomposition.csv", decomposition))
            context["decomposition_table"] = _frame_markdown(decomposition)
        curves = pd.read_csv(calibrate_dir / "reliability.csv")
        for model in model_order(curves["model"].unique()):
            name = f"calibration_{model}.svg"
            bundle.files.append(render_calibration_curves(curves[curves["model"] == model], out / name,
                                                          f"Reliability, {model.upper()}"))
            context["calibration_curves"].append({"model": model.upper(), "file": name})
    else:
        bundle.gaps.append("calibration: not run")

    explain_dir = work / "explain"
    context["shap"] = []
    globals_found = sorted(explain_dir.glob("*_shap_global.csv")) if explain_dir.exists() else []
    if globals_found:
        for path in globals_found:
            model = path.name[:-len("_shap_global.csv")]
            importance = GlobalImportance.from_frame(pd.read_csv(path))
            bar = render_importance_bar(importance, out / f"shap_bar_{model}.svg", top_k,
                                        f"Top {top_k} mean |SHAP|, {model.upper()}")
            bundle.files.append(bar)
            entry = {"model": model.upper(), "bar": bar.name, "beeswarm": None,
                     "top": ", ".join(importance.ranking()[:top_k])}
            rows_path = explain_dir / f"{model}_beeswarm.csv"
            if rows_path.exists():
                phi, values, names = beeswarm_arrays(pd.read_csv(rows_path))
                swarm = render_beeswarm(phi, values, names, out / f"shap_beeswarm_{model}.svg", top_k)
                bundle.files.append(swarm)
                entry["beeswarm"] = swarm.name
            context["shap"].append(entry)
    else:
        bundle.gaps.append("explain: not run")

    context["gaps"] = bundle.gaps
    env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), undefined=StrictUndefined,
                      keep_trailing_newline=True)
    text = env.get_template(TEMPLATE_NAME).render(**context)
    report = out / "report.md"
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(text)
    bundle.files.append(report)
    logger.info(f"Report written to {out} ({len(bundle.files)} files, gaps: {bundle.gaps or 'none'})")
    return bundle
