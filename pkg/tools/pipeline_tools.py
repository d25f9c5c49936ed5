"""
Stage orchestration for the benchmark.

Each stage reads the artifacts of its upstream stages from the work
directory, writes its own outputs and appends an entry to the run manifest.
A stage whose inputs, config snapshot and outputs are unchanged since its
last run is skipped unless forced.
"""
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from base import ModelFamily
from tools.calibration_tools import brier_decomposition, calibrate_run, reliability_curve
from tools.dataset_tools import FeatureMatrix, load_cohort, split_cohort
from tools.evaluation_tools import (
    best_seed,
    ensemble_runs,
    metric_groups,
    predictions_frame,
    results_frame,
    seeded_retrain,
    summary_table,
)
from tools.feature_tools import EngineeringConfig, engineer_splits
from tools.metric_tools import METRICS
from tools.model_tools import ENSEMBLE_MEMBERS, load_model, save_model, search_space
from tools.report_tools import model_order, render_report
from tools.search_tools import TrialLedger, cv_objective, family_factory, nsga2_feature_search, tpe_optimize
from tools.shap_tools import (
    aggregate_global,
    background_sample,
    beeswarm_rows,
    explain_samples,
    model_specific_importance,
)
from tools.stats_tools import anova_oneway, tukey_hsd
from tools.synth_tools import SynthConfig, write_synthetic
from tools.timeseries_tools import summarize_kinds
from utils.artifacts import RunManifest, read_json, write_csv, write_json
from utils.config import STAGES, PipelineConfig, load_model_config, read_config_file
from utils.errors import StageError, StatsError
from utils.logging import get_logger
from utils.seeding import derive_seed

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")


@dataclass
class StageContext:
    config: PipelineConfig
    work: Path
    manifest: RunManifest

    @property
    def seed(self) -> int:
        return self.config.master_seed

    @property
    def jobs(self) -> int:
        return self.config.jobs

    @property
    def base_families(self) -> List[str]:
        return [f for f in self.config.families if f != ModelFamily.ENSEMBLE.value]

    @property
    def seeds(self) -> List[int]:
        return [self.seed + i for i in range(self.config.budgets.seeds)]

    def path(self, *parts: str) -> Path:
        return self.work.joinpath(*parts)

    def fixed_hp(self, family: str) -> Dict[str, Any]:
        """Hyperparameters held out of the search for a family."""
        if family == ModelFamily.MLP.value:
            return self.config.mlp.model_dump()
        return {}

    def matrix(self, split: str) -> FeatureMatrix:
        matrix, _ = FeatureMatrix.from_csv(self.path("engineer", f"{split}.csv"))
        return matrix


def _require(paths: Sequence[Path], stage: str, required: str) -> List[Path]:
    for path in paths:
        if not Path(path).exists():
            raise StageError(f"{stage} needs {path}: run {required} first", required_stage=required)
    return list(paths)


def _snapshot(ctx: StageContext, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    snapshot = ctx.config.model_dump(mode="json", exclude={"jobs", "stages"})
    snapshot.update(extra or {})
    return snapshot


# synth

def _synth_inputs(ctx: StageContext) -> List[Path]:
    path = Path(ctx.config.paths.synth_config)
    if not path.exists():
        raise StageError(f"synth needs its config file {path}")
    return [path]


def _synth(ctx: StageContext) -> List[Path]:
    synth = load_model_config(ctx.config.paths.synth_config, SynthConfig)
    cohort, truth = write_synthetic(synth, ctx.config.paths.cohort)
    return [cohort, truth]


# engineer

def _engineer_inputs(ctx: StageContext) -> List[Path]:
    paths = _require([Path(ctx.config.paths.cohort)], "engineer", "synth")
    config = Path(ctx.config.paths.imputation_config)
    if not config.exists():
        raise StageError(f"engineer needs its config file {config}")
    return paths + [config]


def _engineer(ctx: StageContext) -> List[Path]:
    cohort = load_cohort(ctx.config.paths.cohort)
    split = split_cohort(cohort, ctx.seed)
    config = load_model_config(ctx.config.paths.imputation_config, EngineeringConfig)
    result = engineer_splits(cohort, split, config, derive_seed(ctx.seed, "impute"), ctx.jobs)

    outputs = [write_json(ctx.path("engineer", "split.json"), split.to_dict())]
    for name in SPLITS:
        outputs.extend(result.split(name).to_csv(ctx.path("engineer", f"{name}.csv")))
    scaler = result.scaler
    outputs.append(write_json(ctx.path("engineer", "scaler.json"), {
        "feature_names": scaler.feature_names, "mean": scaler.mean, "std": scaler.std,
        "zero_variance": scaler.zero_variance}))
    plan = result.plan
    outputs.append(write_json(ctx.path("engineer", "engineering.json"), {
        "timeseries_kinds": summarize_kinds(result.engineer.kinds),
        "strategies": plan.strategies,
        "dichotomized": plan.dichotomized,
        "iterative_rounds": plan.iterative_rounds,
        "dropped_redundant": result.dropped,
        "n_features": len(result.train.feature_names),
        "counts": {name: len(getattr(split, f"{name}_ids")) for name in SPLITS},
    }))
    return outputs


# select

def _select_inputs(ctx: StageContext) -> List[Path]:
    return _require([ctx.path("engineer", "train.csv"), ctx.path("engineer", "train.schema.json")],
                    "select", "engineer")


def _select(ctx: StageContext) -> List[Path]:
    train = ctx.matrix("train")
    budgets = ctx.config.budgets
    outputs = []
    for family in ctx.base_families:
        ledger_path = ctx.path("select", family, "ledger.jsonl")
        fixed = ctx.fixed_hp(family)
        result = nsga2_feature_search(
            family, train.values, train.labels, train.feature_names,
            budget=budgets.selection_trials, population=min(budgets.population, budgets.selection_trials),
            seed=derive_seed(ctx.seed, "select", family), penalty=ctx.config.penalty_lambda,
            inner_trials=budgets.inner_trials, folds=budgets.inner_folds, n_jobs=ctx.jobs,
            ledger=TrialLedger(ledger_path),
            space=search_space(family, ctx.config.space_overrides.get(family)),
            classifier_factory=family_factory(ModelFamily(family), fixed))
        logger.info(f"{family}: selected {result.best.n_selected} of {len(train.feature_names)} features "
                    f"(loss {result.best.fitness:.4f})")
        outputs.append(ledger_path)
        outputs.append(write_json(ctx.path("select", family, "selected.json"), {
            "features": result.selected, "loss": result.best.fitness, "trial_index": int(result.ledger.best()["index"])}))
    return outputs


# tune

def _tune_inputs(ctx: StageContext) -> List[Path]:
    paths = _select_inputs(ctx)
    return paths + _require([ctx.path("select", f, "selected.json") for f in ctx.base_families], "tune", "select")


def _tune(ctx: StageContext) -> List[Path]:
    train = ctx.matrix("train")
    budgets, tpe = ctx.config.budgets, ctx.config.tpe
    outputs = []
    for family in ctx.base_families:
        features = read_json(ctx.path("select", family, "selected.json"))["features"]
        X = train.select_columns(features).values
        fixed = ctx.fixed_hp(family)
        seed = derive_seed(ctx.seed, "tune", family)
        ledger_path = ctx.path("tune", family, "ledger.jsonl")
        result = tpe_optimize(search_space(family, ctx.config.space_overrides.get(family)),
                              cv_objective(family, X, train.labels, budgets.tpe_folds, seed, fixed),
                              n_trials=budgets.tpe_trials, seed=seed,
                              n_startup=min(tpe.n_startup, budgets.tpe_trials), n_candidates=tpe.n_candidates,
                              gamma=tpe.gamma, n_jobs=ctx.jobs, ledger=TrialLedger(ledger_path))
        logger.info(f"{family}: tuned CV normed MCC {1.0 - result.best_loss:.4f}")
        outputs.append(ledger_path)
        outputs.append(write_json(ctx.path("tune", family, "best.json"), {
            "hp": {**result.best_point, **fixed}, "loss": result.best_loss, "features": features}))
    return outputs


# train

def _train_inputs(ctx: StageContext) -> List[Path]:
    paths = _require([ctx.path("engineer", f"{s}.csv") for s in SPLITS], "train", "engineer")
    return paths + _require([ctx.path("tune", f, "best.json") for f in ctx.base_families], "train", "tune")


def _train(ctx: StageContext) -> List[Path]:
    splits = {name: ctx.matrix(name) for name in SPLITS}
    runs_by_family = {}
    outputs = []
    for family in ctx.base_families:
        best = read_json(ctx.path("tune", family, "best.json"))
        runs = seeded_retrain(family, best["hp"], best["features"], splits["train"], splits["val"], splits["test"],
                              ctx.seeds, ctx.jobs, ctx.config.min_seed_success)
        runs_by_family[family] = runs
        for run in runs:
            if run.ok:
                outputs.append(save_model(run.model, ctx.path("train", "models", family,
                                                               f"seed_{run.result.seed}.joblib")))

    if ModelFamily.ENSEMBLE.value in ctx.config.families:
        members = {f: runs for f, runs in runs_by_family.items() if ModelFamily(f) in ENSEMBLE_MEMBERS}
        if not members:
            raise StageError("the ensemble needs at least one of lr, rf, xgb, mlp in families")
        runs_by_family[ModelFamily.ENSEMBLE.value] = ensemble_runs(members, splits["val"], splits["test"],
                                                                   ctx.config.min_seed_success)

    all_runs = [run for runs in runs_by_family.values() for run in runs]
    results = [run.result for run in all_runs]
    outputs.append(write_csv(ctx.path("train", "metrics.csv"), results_frame(results)))
    outputs.append(write_csv(ctx.path("train", "runs.csv"),
                             pd.DataFrame([r.to_dict() for r in results]).drop(columns=["wall_time"])))
    outputs.append(write_csv(ctx.path("train", "predictions.csv"),
                             predictions_frame(all_runs, {"val": splits["val"], "test": splits["test"]})))
    return outputs


# evaluate

def _metrics_input(ctx: StageContext, stage: str) -> List[Path]:
    return _require([ctx.path("train", "metrics.csv")], stage, "train")


def _evaluate(ctx: StageContext) -> List[Path]:
    metrics = pd.read_csv(ctx.path("train", "metrics.csv"))
    order = model_order(metrics["model"].unique())
    outputs = [write_csv(ctx.path("evaluate", "summary.csv"), summary_table(metrics, order))]
    rows = []
    for metric in METRICS:
        groups = metric_groups(metrics, metric, order)
        try:
            anova = anova_oneway(groups)
            table = tukey_hsd(groups)
        except StatsError as e:
            logger.warning(f"Statistical comparison of {metric} skipped: {e}")
            continue
        rows.append({"metric": metric, **anova.to_dict()})
        outputs.append(write_json(ctx.path("evaluate", f"tukey_{metric}.json"), table.to_dict()))
        outputs.append(write_csv(ctx.path("evaluate", f"tukey_{metric}.csv"), table.to_frame()))
        logger.info(f"ANOVA {metric}: F={anova.f_statistic:.3f}, p={anova.p_value:.3g}")
    if rows:
        outputs.append(write_csv(ctx.path("evaluate", "anova.csv"), pd.DataFrame(rows)))
    return outputs


# calibrate

def _calibrate_inputs(ctx: StageContext) -> List[Path]:
    return _require([ctx.path("train", "metrics.csv"), ctx.path("train", "predictions.csv")], "calibrate", "train")


def _calibrate(ctx: StageContext) -> List[Path]:
    metrics = pd.read_csv(ctx.path("train", "metrics.csv"))
    predictions = pd.read_csv(ctx.path("train", "predictions.csv"), dtype={"donor_id": str})
    n_bins = ctx.config.calibration.n_bins
    brier_rows, ece_rows, curve_frames, decomposition, platt = [], [], [], [], {}
    for family in ctx.base_families:
        seed = best_seed(metrics, family)
        rows = predictions[(predictions["model"] == family) & (predictions["seed"] == seed)]
        val, test = rows[rows["split"] == "val"], rows[rows["split"] == "test"]
        outcome = calibrate_run(family, seed, val["raw_score"].to_numpy(), val["label"].to_numpy(),
                                test["raw_score"].to_numpy(), test["p"].to_numpy(), test["label"].to_numpy())
        brier_rows.append(outcome.brier_row())
        ece_rows.append(outcome.ece_row(n_bins))
        platt[family] = outcome.platt.to_dict() if outcome.platt else None
        for method, p in outcome.probabilities.items():
            frame = reliability_curve(p, outcome.y_test, n_bins).to_frame()
            frame.insert(0, "method", method)
            frame.insert(0, "model", family)
            curve_frames.append(frame)
            decomposition.append({"model": family, "method": method,
                                  **brier_decomposition(p, outcome.y_test, n_bins)})
        logger.info(f"{family} seed {seed}: Brier {outcome.brier_row()}")

    columns = ["model", "seed", "uncalibrated", "platt", "isotonic"]
    return [
        write_csv(ctx.path("calibrate", "brier.csv"), pd.DataFrame(brier_rows, columns=columns)),
        write_csv(ctx.path("calibrate", "ece.csv"), pd.DataFrame(ece_rows, columns=columns)),
        write_csv(ctx.path("calibrate", "reliability.csv"), pd.concat(curve_frames, ignore_index=True)),
        write_csv(ctx.path("calibrate", "brier_decomposition.csv"), pd.DataFrame(decomposition)),
        write_json(ctx.path("calibrate", "platt.json"), platt),
    ]


# explain

def _explain_inputs(ctx: StageContext) -> List[Path]:
    paths = _require([ctx.path("engineer", "train.csv"), ctx.path("engineer", "test.csv"),
                      ctx.path("engineer", "scaler.json")], "explain", "engineer")
    paths += _metrics_input(ctx, "explain")
    models_dir = ctx.path("train", "models")
    return paths + sorted(models_dir.rglob("*.joblib"))


def _explain(ctx: StageContext) -> List[Path]:
    metrics = pd.read_csv(ctx.path("train", "metrics.csv"))
    train, test = ctx.matrix("train"), ctx.matrix("test")
    scaler = read_json(ctx.path("engineer", "scaler.json"))
    position = {n: j for j, n in enumerate(scaler["feature_names"])}
    settings = ctx.config.explain
    if settings.max_samples:
        test = test.select_rows(test.donor_ids[:settings.max_samples])

    outputs = []
    for family in ctx.base_families:
        seed = best_seed(metrics, family)
        model_path = _require([ctx.path("train", "models", family, f"seed_{seed}.joblib")], "explain", "train")[0]
        model = load_model(model_path)
        X_train = train.select_columns(model.feature_names).values
        X_test = test.select_columns(model.feature_names).values
        background = background_sample(X_train, settings.background_size, derive_seed(ctx.seed, "background", family))
        attributions = explain_samples(model.positive_proba, X_test, background, model.feature_names,
                                       settings.n_permutations, derive_seed(ctx.seed, "shap", family), ctx.jobs)
        importance = aggregate_global(attributions)
        gap = max(np.max(np.abs(a.pass_values.sum(axis=1) - (a.output - a.base_value))) for a in attributions)
        logger.info(f"{family} seed {seed}: explained {len(attributions)} donors, "
                    f"top features {importance.ranking()[:3]}, max telescoping gap {gap:.2e}")

        cols = [position[n] for n in model.feature_names]
        raw = X_test * np.asarray(scaler["std"])[cols] + np.asarray(scaler["mean"])[cols]
        outputs.append(write_csv(ctx.path("explain", f"{family}_shap_global.csv"),
                                 importance.top_k(len(importance.feature_names))))
        outputs.append(write_csv(ctx.path("explain", f"{family}_beeswarm.csv"),
                                 beeswarm_rows(attributions, raw, test.donor_ids)))
        native = model_specific_importance(model, X_train)
        if native is not None:
            frame = pd.DataFrame({"feature": list(native), "importance": list(native.values())})
            frame = frame.sort_values(["importance", "feature"], ascending=[False, True])
            outputs.append(write_csv(ctx.path("explain", f"{family}_native.csv"), frame))
    return outputs


# report

def _report_inputs(ctx: StageContext) -> List[Path]:
    paths = _metrics_input(ctx, "report")
    for stage in ("evaluate", "calibrate", "explain"):
        stage_dir = ctx.path(stage)
        if stage_dir.exists():
            paths += sorted(p for p in stage_dir.rglob("*") if p.is_file())
    return paths


def _report(ctx: StageContext) -> List[Path]:
    return render_report(ctx.work, ctx.path("report"), ctx.config.explain.top_k).files


@dataclass(frozen=True)
class Stage:
    name: str
    inputs: Callable[[StageContext], List[Path]]
    run: Callable[[StageContext], List[Path]]
    extra_config: Optional[Callable[[StageContext], Dict[str, Any]]] = None


STAGE_REGISTRY: Dict[str, Stage] = {
    "synth": Stage("synth", _synth_inputs, _synth,
                   lambda ctx: {"synth": read_config_file(ctx.config.paths.synth_config)}),
    "engineer": Stage("engineer", _engineer_inputs, _engineer,
                      lambda ctx: {"engineering": read_config_file(ctx.config.paths.imputation_config)}),
    "select": Stage("select", _select_inputs, _select),
    "tune": Stage("tune", _tune_inputs, _tune),
    "train": Stage("train", _train_inputs, _train),
    "evaluate": Stage("evaluate", lambda ctx: _metrics_input(ctx, "evaluate"), _evaluate),
    "calibrate": Stage("calibrate", _calibrate_inputs, _calibrate),
    "explain": Stage("explain", _explain_inputs, _explain),
    "report": Stage("report", _report_inputs, _report),
}


def _context(config: PipelineConfig) -> StageContext:
    work = config.work_dir
    work.mkdir(parents=True, exist_ok=True)
    return StageContext(config, work, RunManifest(work / MANIFEST_NAME))


def run_stage(stage: str, config: PipelineConfig, force: bool = False) -> List[Path]:
    """
    Run one pipeline stage and record it in the manifest.

    Args:
        stage: One of synth, engineer, select, tune, train, evaluate, calibrate, explain, report
        config: Pipeline configuration
        force: Re-run even if the manifest says the stage is current

    Returns:
        Paths written (or recorded, when skipped)

    Raises:
        StageError: For an unknown stage or missing upstream artifacts
    """
    if stage not in STAGE_REGISTRY:
        raise StageError(f"unknown stage '{stage}', expected one of {STAGES}")
    spec = STAGE_REGISTRY[stage]
    ctx = _context(config)
    inputs = ctx.manifest.hash_inputs(spec.inputs(ctx))
    snapshot = _snapshot(ctx, spec.extra_config(ctx) if spec.extra_config else None)

    if not force and ctx.manifest.is_current(stage, inputs, snapshot):
        logger.info(f"Stage {stage}: up to date, skipped (use --force to re-run)")
        return ctx.manifest.outputs(stage)

    logger.info(f"Stage {stage}: started")
    started = time.time()
    outputs = spec.run(ctx)
    ctx.manifest.record_stage(stage, inputs, outputs, snapshot, started)
    logger.info(f"Stage {stage}: finished in {time.time() - started:.1f}s, {len(outputs)} outputs")
    return outputs


def run_all(config: PipelineConfig, force: bool = False) -> Dict[str, List[Path]]:
    """Run every enabled stage in pipeline order."""
    done = {}
    for stage in STAGES:
        if not config.stages.get(stage, True):
            logger.info(f"Stage {stage}: disabled in config")
            continue
        done[stage] = run_stage(stage, config, force)
    return done
