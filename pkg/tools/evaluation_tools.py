"""
Seeded retraining of tuned models and the result tables built from it.
"""
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from base import ModelFamily, ProbabilisticClassifier
from tools.dataset_tools import FeatureMatrix
from tools.metric_tools import METRICS, score_predictions
from tools.model_tools import EnsembleModel, make_classifier
from utils.errors import RetrainError
from utils.logging import get_logger

logger = get_logger(__name__)


@dataclass
class SeedRunResult:
    family: str
    seed: int
    f1: float = float("nan")
    auc: float = float("nan")
    normed_mcc: float = float("nan")
    mcc: float = float("nan")
    wall_time: float = 0.0
    status: str = "ok"
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class SeedRun:
    """One seed's fitted model with its validation and test outputs."""

    result: SeedRunResult
    model: Optional[ProbabilisticClassifier] = None
    outputs: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.result.status == "ok"


def _outputs(model: ProbabilisticClassifier, matrix: FeatureMatrix) -> Dict[str, np.ndarray]:
    X = model.project(matrix)
    p = model.positive_proba(X)
    try:
        raw = model.raw_scores(X)
    except ValueError:
        raw = np.full(len(p), np.nan)
    return {"p": np.asarray(p, dtype=np.float64), "raw": np.asarray(raw, dtype=np.float64)}


def run_seed(family: ModelFamily, hp: Dict, features: Sequence[str], train: FeatureMatrix, val: FeatureMatrix,
             test: FeatureMatrix, seed: int,
             factory: Optional[Callable[[Dict, int], ProbabilisticClassifier]] = None) -> SeedRun:
    """Fit one seed on train (early stopping on val) and score it on test. Failures are recorded."""
    started = time.time()
    try:
        model = (factory or (lambda h, s: make_classifier(family, h, s)))(hp, seed)
        features = list(features)
        model.fit(train.select_columns(features).values, train.labels,
                  val.select_columns(features).values, val.labels, features)
        outputs = {"val": _outputs(model, val), "test": _outputs(model, test)}
        metrics = score_predictions(test.labels, outputs["test"]["p"])
        result = SeedRunResult(family.value, seed, wall_time=time.time() - started, **metrics)
        return SeedRun(result, model, outputs)
    except Exception as e:
        logger.warning(f"{family.value} seed {seed} failed: {e}")
        return SeedRun(SeedRunResult(family.value, seed, wall_time=time.time() - started,
                                     status="failed", error=str(e)))


def _check_success(family: str, runs: Sequence[SeedRun], min_success: float) -> None:
    ok = sum(r.ok for r in runs)
    if ok < min_success * len(runs):
        raise RetrainError(f"{family}: only {ok} of {len(runs)} seeds succeeded "
                           f"(at least {min_success:.0%} required)")


def seeded_retrain(family: ModelFamily, hp: Dict, features: Sequence[str], train: FeatureMatrix,
                   val: FeatureMatrix, test: FeatureMatrix, seeds: Sequence[int], n_jobs: int = 1,
                   min_success: float = 0.9,
                   factory: Optional[Callable[[Dict, int], ProbabilisticClassifier]] = None) -> List[SeedRun]:
    """
    Retrain a fixed configuration once per seed and evaluate on the test split.

    Returns:
        SeedRun per seed, in seed order

    Raises:
        RetrainError: If fewer than `min_success` of the seeds succeed
    """
    family = ModelFamily(family)
    runs = Parallel(n_jobs=n_jobs)(
        delayed(run_seed)(family, hp, features, train, val, test, s, factory) for s in seeds)
    _check_success(family.value, runs, min_success)
    done = [r.result.normed_mcc for r in runs if r.ok]
    logger.info(f"{family.value}: {len(done)}/{len(runs)} seeds, normed MCC "
                f"{np.mean(done):.4f} +/- {np.std(done):.4f}")
    return runs


def ensemble_runs(member_runs: Dict[str, List[SeedRun]], val: FeatureMatrix, test: FeatureMatrix,
                  min_success: float = 0.9) -> List[SeedRun]:
    """
    Mean-probability ensemble per seed over the member runs that succeeded at that seed.
    """
    seeds = sorted({r.result.seed for runs in member_runs.values() for r in runs})
    by_seed = {s: [r for runs in member_runs.values() for r in runs if r.result.seed == s and r.ok]
               for s in seeds}
    out = []
    for seed in seeds:
        started = time.time()
        members = [r.model for r in by_seed[seed]]
        if not members:
            out.append(SeedRun(SeedRunResult("ensemble", seed, status="failed", error="no member succeeded")))
            continue
        model = EnsembleModel(members, seed)
        outputs = {}
        for name, matrix in (("val", val), ("test", test)):
            p = model.positive_proba(matrix)
            outputs[name] = {"p": p, "raw": np.full(len(p), np.nan)}
        metrics = score_predictions(test.labels, outputs["test"]["p"])
        out.append(SeedRun(SeedRunResult("ensemble", seed, wall_time=time.time() - started, **metrics),
                           model, outputs))
    _check_success("ensemble", out, min_success)
    return out


def results_frame(results: Sequence[SeedRunResult]) -> pd.DataFrame:
    """Long-format metrics: model, seed, metric, value (successful runs only)."""
    rows = [{"model": r.family, "seed": r.seed, "metric": m, "value": getattr(r, m)}
            for r in results if r.status == "ok" for m in METRICS]
    return pd.DataFrame(rows, columns=["model", "seed", "metric", "value"])


def predictions_frame(runs: Sequence[SeedRun], splits: Dict[str, FeatureMatrix]) -> pd.DataFrame:
    """Per-donor validation and test outputs of every successful run."""
    frames = []
    for run in runs:
        if not run.ok:
            continue
        for split, matrix in splits.items():
            out = run.outputs[split]
            frames.append(pd.DataFrame({"model": run.result.family, "seed": run.result.seed, "split": split,
                                        "donor_id": matrix.donor_ids, "label": matrix.labels,
                                        "raw_score": out["raw"], "p": out["p"]}))
    columns = ["model", "seed", "split", "donor_id", "label", "raw_score", "p"]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)


def summary_table(metrics: pd.DataFrame, order: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Mean and std per model with columns in F1, AUC, normed MCC order."""
    table = metrics.pivot_table(index="model", columns="metric", values="value", aggfunc=["mean", "std"])
    rows = []
    for model in (order or sorted(table.index)):
        if model not in table.index:
            continue
        row = {"model": model}
        for m in METRICS:
            row[m] = float(table.loc[model, ("mean", m)])
        for m in METRICS:
            row[f"{m}_std"] = float(table.loc[model, ("std", m)])
        rows.append(row)
    return pd.DataFrame(rows, columns=["model", *METRICS, *[f"{m}_std" for m in METRICS]])


def metric_groups(metrics: pd.DataFrame, metric: str, order: Optional[Sequence[str]] = None) -> Dict[str, List[float]]:
    subset = metrics[metrics["metric"] == metric]
    models = order or sorted(subset["model"].unique())
    return {m: subset.loc[subset["model"] == m].sort_values("seed")["value"].tolist()
            for m in models if (subset["model"] == m).any()}


def best_seed(metrics: pd.DataFrame, model: str) -> int:
    """Seed with the highest test normed MCC; lowest seed on ties."""
    subset = metrics[(metrics["model"] == model) & (metrics["metric"] == "normed_mcc")]
    if subset.empty:
        raise RetrainError(f"no successful runs recorded for {model}")
    ranked = subset.sort_values(["value", "seed"], ascending=[False, True])
    return int(ranked.iloc[0]["seed"])
