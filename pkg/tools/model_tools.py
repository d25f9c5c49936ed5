"""
Model families, hyperparameter validation and search spaces, the
mean-probability ensemble and model persistence.
"""
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
import optuna
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from sklearn.ensemble import RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.tree import DecisionTreeClassifier
from xgboost import XGBClassifier

from base import ModelFamily, ProbabilisticClassifier, predict_label
from tools.mlp_tools import MLPModel
from utils.errors import ModelConfigError
from utils.logging import get_logger

logger = get_logger(__name__)

ENSEMBLE_MEMBERS = (ModelFamily.LR, ModelFamily.RF, ModelFamily.XGB, ModelFamily.MLP)


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DTParams(_Params):
    max_depth: Optional[int] = Field(None, ge=1)
    min_samples_leaf: int = Field(1, ge=1)
    min_samples_split: int = Field(2, ge=2)
    max_features: Optional[Literal["sqrt"]] = None


class LRParams(_Params):
    C: float = Field(1.0, gt=0.0)
    l1_ratio: float = Field(0.5, ge=0.0, le=1.0)
    tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(200, ge=1)


class RFParams(_Params):
    n_estimators: int = Field(446, ge=1)
    max_depth: Optional[int] = Field(None, ge=1)
    min_samples_leaf: int = Field(1, ge=1)
    min_samples_split: int = Field(2, ge=2)
    max_features: Optional[Literal["sqrt"]] = "sqrt"
    bootstrap: bool = True


class XGBParams(_Params):
    n_estimators: int = Field(100, ge=1)
    learning_rate: float = Field(0.1, ge=0.0, le=1.0)
    max_depth: int = Field(6, ge=0)
    min_child_weight: float = Field(1.0, ge=0.0)
    subsample: float = Field(1.0, gt=0.0, le=1.0)
    colsample_bytree: float = Field(1.0, gt=0.0, le=1.0)
    reg_alpha: float = Field(0.0, ge=0.0)
    reg_lambda: float = Field(1.0, ge=0.0)
    early_stopping_rounds: int = Field(10, ge=1)
    tree_method: Literal["hist", "exact"] = "hist"
    max_bin: int = Field(256, ge=2)
    base_score: Optional[float] = Field(None, gt=0.0, lt=1.0)


class MLPParams(_Params):
    n_layer: int = Field(1, ge=1)
    hidden_dim: int = Field(64, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    batchnorm: bool = False
    activation: Literal["elu"] = "elu"
    init_lr: float = Field(1e-3, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    class_weights: bool = False
    batch_size: int = Field(128, ge=1)
    max_epochs: int = Field(500, ge=1)
    patience: int = Field(20, ge=1)


PARAM_MODELS = {
    ModelFamily.DT: DTParams,
    ModelFamily.LR: LRParams,
    ModelFamily.RF: RFParams,
    ModelFamily.XGB: XGBParams,
    ModelFamily.MLP: MLPParams,
}


def validate_hp(family: Union[ModelFamily, str], hp: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate a hyperparameter point against its family's schema.

    Returns:
        Complete hyperparameter dict with defaults filled in

    Raises:
        ModelConfigError: Naming the offending field
    """
    family = ModelFamily(family)
    if family not in PARAM_MODELS:
        raise ModelConfigError(f"no hyperparameters for family '{family.value}'")
    try:
        return PARAM_MODELS[family].model_validate(hp).model_dump()
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) for err in e.errors())
        raise ModelConfigError(f"invalid {family.value} hyperparameters ({fields}): {e}") from e


@dataclass(frozen=True)
class ParamSpec:
    """One search dimension: int/float range (optionally log scale) or categorical."""

    name: str
    kind: Literal["int", "float", "categorical"]
    low: Optional[float] = None
    high: Optional[float] = None
    log: bool = False
    step: Optional[float] = None
    choices: Tuple[Any, ...] = ()

    def contains(self, value: Any) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        return self.low <= value <= self.high

    def sample(self, rng: np.random.Generator) -> Any:
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.log:
            value = float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        else:
            value = float(rng.uniform(self.low, self.high))
        if self.step:
            value = self.low + round((value - self.low) / self.step) * self.step
        if self.kind == "int":
            return int(min(max(round(value), self.low), self.high))
        return float(min(max(value, self.low), self.high))

    def distribution(self) -> optuna.distributions.BaseDistribution:
        if self.kind == "categorical":
            return optuna.distributions.CategoricalDistribution(list(self.choices))
        if self.kind == "int":
            return optuna.distributions.IntDistribution(int(self.low), int(self.high), log=self.log,
                                                        step=int(self.step or 1))
        return optuna.distributions.FloatDistribution(self.low, self.high, log=self.log, step=self.step)


@dataclass
class HyperParamSpace:
    """Named search dimensions of one model family."""

    family: ModelFamily
    params: List[ParamSpec] = field(default_factory=list)

    def sample(self, rng: np.random.Generator) -> Dict[str, Any]:
        return {p.name: p.sample(rng) for p in self.params}

    def contains(self, point: Dict[str, Any]) -> bool:
        return all(p.name in point and p.contains(point[p.name]) for p in self.params)

    def distributions(self) -> Dict[str, optuna.distributions.BaseDistribution]:
        return {p.name: p.distribution() for p in self.params}

    def narrowed(self, overrides: Optional[Dict[str, Sequence[float]]]) -> "HyperParamSpace":
        """Replace numeric bounds (or categorical choices) from a config mapping."""
        if not overrides:
            return self
        unknown = set(overrides) - {p.name for p in self.params}
        if unknown:
            raise ModelConfigError(f"space overrides for unknown {self.family.value} parameters: {sorted(unknown)}")
        params = []
        for p in self.params:
            if p.name not in overrides:
                params.append(p)
            elif p.kind == "categorical":
                params.append(ParamSpec(p.name, p.kind, choices=tuple(overrides[p.name])))
            else:
                low, high = overrides[p.name]
                params.append(ParamSpec(p.name, p.kind, low, high, p.log, p.step))
        return HyperParamSpace(self.family, params)


_TREE_DIMS = [
    ParamSpec("max_depth", "int", 1, 50),
    ParamSpec("min_samples_leaf", "int", 1, 20),
    ParamSpec("min_samples_split", "int", 2, 20),
]

SEARCH_SPACES = {
    ModelFamily.DT: HyperParamSpace(ModelFamily.DT, _TREE_DIMS + [
        ParamSpec("max_features", "categorical", choices=("sqrt", None))]),
    ModelFamily.LR: HyperParamSpace(ModelFamily.LR, [
        ParamSpec("C", "float", 0.01, 100.0, log=True),
        ParamSpec("l1_ratio", "float", 0.0, 1.0)]),
    ModelFamily.RF: HyperParamSpace(ModelFamily.RF, [ParamSpec("n_estimators", "int", 10, 500)] + _TREE_DIMS),
    ModelFamily.XGB: HyperParamSpace(ModelFamily.XGB, [
        ParamSpec("n_estimators", "int", 100, 1500, step=50),
        ParamSpec("learning_rate", "float", 0.001, 0.1, log=True),
        ParamSpec("max_depth", "int", 2, 15),
        ParamSpec("min_child_weight", "int", 1, 20),
        ParamSpec("subsample", "float", 0.75, 1.0),
        ParamSpec("colsample_bytree", "float", 0.75, 1.0),
        ParamSpec("reg_alpha", "float", 0.001, 20.0, log=True),
        ParamSpec("reg_lambda", "float", 0.001, 25.0, log=True),
        ParamSpec("early_stopping_rounds", "int", 5, 100, step=5)]),
    ModelFamily.MLP: HyperParamSpace(ModelFamily.MLP, [
        ParamSpec("n_layer", "int", 1, 10),
        ParamSpec("hidden_dim", "int", 16, 1500, log=True),
        ParamSpec("dropout", "float", 0.0, 0.5),
        ParamSpec("batchnorm", "categorical", choices=(False, True)),
        ParamSpec("init_lr", "float", 1e-4, 0.1, log=True),
        ParamSpec("weight_decay", "float", 1e-10, 1e-6, log=True),
        ParamSpec("class_weights", "categorical", choices=(False, True))]),
}


def search_space(family: Union[ModelFamily, str],
                 overrides: Optional[Dict[str, Sequence[float]]] = None) -> HyperParamSpace:
    family = ModelFamily(family)
    if family not in SEARCH_SPACES:
        raise ModelConfigError(f"family '{family.value}' has no search space")
    return SEARCH_SPACES[family].narrowed(overrides)


class _SklearnModel(ProbabilisticClassifier):
    estimator: Any = None

    def _build(self) -> Any:
        raise NotImplementedError

    def _fit(self, X, y, X_val, y_val):
        self.estimator = self._build()
        self.estimator.fit(X, y)

    def positive_proba(self, X: np.ndarray) -> np.ndarray:
        proba = self.estimator.predict_proba(np.asarray(X, dtype=np.float64))
        classes = list(self.estimator.classes_)
        if 1 not in classes:
            return np.zeros(len(proba))
        return proba[:, classes.index(1)]

    def importances(self) -> Optional[Dict[str, float]]:
        return dict(zip(self.feature_names, map(float, self.estimator.feature_importances_)))


class DecisionTreeModel(_SklearnModel):
    """CART with Gini impurity; leaf probability = class fraction."""

    family = ModelFamily.DT

    def _build(self):
        return DecisionTreeClassifier(criterion="gini", max_depth=self.hp["max_depth"],
                                      min_samples_leaf=self.hp["min_samples_leaf"],
                                      min_samples_split=self.hp["min_samples_split"],
                                      max_features=self.hp["max_features"], random_state=self.seed)


class LogisticRegressionModel(_SklearnModel):
    """Elastic-net logistic regression fitted with the saga solver."""

    family = ModelFamily.LR

    def _build(self):
        return LogisticRegression(penalty="elasticnet", solver="saga", C=self.hp["C"],
                                  l1_ratio=self.hp["l1_ratio"], tol=self.hp["tol"],
                                  max_iter=self.hp["max_iter"], random_state=self.seed)

    def _fit(self, X, y, X_val, y_val):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", category=ConvergenceWarning)
            super()._fit(X, y, X_val, y_val)
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            logger.debug(f"saga stopped at max_iter={self.hp['max_iter']} (C={self.hp['C']:.4g})")

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.decision_function(np.asarray(X, dtype=np.float64))

    def importances(self) -> Optional[Dict[str, float]]:
        return dict(zip(self.feature_names, map(float, np.abs(self.estimator.coef_[0]))))


class RandomForestModel(_SklearnModel):
    """Bootstrap forest of CART trees with sqrt feature subsampling."""

    family = ModelFamily.RF

    def _build(self):
        return RandomForestClassifier(n_estimators=self.hp["n_estimators"], max_depth=self.hp["max_depth"],
                                      min_samples_leaf=self.hp["min_samples_leaf"],
                                      min_samples_split=self.hp["min_samples_split"],
                                      max_features=self.hp["max_features"], bootstrap=self.hp["bootstrap"],
                                      random_state=self.seed, n_jobs=1)


class XGBoostModel(ProbabilisticClassifier):
    """Newton-boosted trees on logistic loss, early-stopped on the validation split."""

    family = ModelFamily.XGB
    needs_validation = True

    def _fit(self, X, y, X_val, y_val):
        hp = self.hp
        self.estimator = XGBClassifier(
            n_estimators=hp["n_estimators"], learning_rate=hp["learning_rate"], max_depth=hp["max_depth"],
            min_child_weight=hp["min_child_weight"], subsample=hp["subsample"],
            colsample_bytree=hp["colsample_bytree"], reg_alpha=hp["reg_alpha"], reg_lambda=hp["reg_lambda"],
            early_stopping_rounds=hp["early_stopping_rounds"], tree_method=hp["tree_method"],
            max_bin=hp["max_bin"], base_score=hp["base_score"], objective="binary:logistic",
            eval_metric="logloss", random_state=self.seed, n_jobs=1)
        self.estimator.fit(X, y, eval_set=[(X_val, y_val)], verbose=False)
        logger.debug(f"xgb best iteration {self.best_iteration} of {hp['n_estimators']}")

    @property
    def best_iteration(self) -> int:
        return int(self.estimator.best_iteration)

    @property
    def validation_loss(self) -> List[float]:
        return list(self.estimator.evals_result()["validation_0"]["logloss"])

    def positive_proba(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.predict_proba(np.asarray(X, dtype=np.float64))[:, 1]

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.predict(np.asarray(X, dtype=np.float64), output_margin=True).astype(np.float64)

    def importances(self) -> Optional[Dict[str, float]]:
        gain = self.estimator.get_booster().get_score(importance_type="gain")
        # booster names columns f0, f1, ...
        return {name: float(gain.get(f"f{j}", 0.0)) for j, name in enumerate(self.feature_names)}


MODEL_CLASSES = {
    ModelFamily.DT: DecisionTreeModel,
    ModelFamily.LR: LogisticRegressionModel,
    ModelFamily.RF: RandomForestModel,
    ModelFamily.XGB: XGBoostModel,
    ModelFamily.MLP: MLPModel,
}


def make_classifier(family: Union[ModelFamily, str], hp: Dict[str, Any], seed: int) -> ProbabilisticClassifier:
    """Unfitted classifier of a family with validated hyperparameters."""
    family = ModelFamily(family)
    if family == ModelFamily.ENSEMBLE:
        raise ModelConfigError("the ensemble is assembled from fitted members, see EnsembleModel")
    return MODEL_CLASSES[family](validate_hp(family, hp), seed)


def fit_decision_tree(X, y, hp: Dict[str, Any], seed: int, feature_names=None) -> DecisionTreeModel:
    return make_classifier(ModelFamily.DT, hp, seed).fit(X, y, feature_names=feature_names)


def fit_logreg_elasticnet(X, y, hp: Dict[str, Any], seed: int, feature_names=None) -> LogisticRegressionModel:
    return make_classifier(ModelFamily.LR, hp, seed).fit(X, y, feature_names=feature_names)


def fit_random_forest(X, y, hp: Dict[str, Any], seed: int, feature_names=None) -> RandomForestModel:
    return make_classifier(ModelFamily.RF, hp, seed).fit(X, y, feature_names=feature_names)


def fit_gradient_boosting(X, y, X_val, y_val, hp: Dict[str, Any], seed: int, feature_names=None) -> XGBoostModel:
    return make_classifier(ModelFamily.XGB, hp, seed).fit(X, y, X_val, y_val, feature_names)


class EnsembleModel(ProbabilisticClassifier):
    """
    Mean-probability ensemble of fitted LR, RF, XGB and MLP members, each
    reading its own feature subset. Inputs are FeatureMatrix objects.
    """

    family = ModelFamily.ENSEMBLE

    def __init__(self, members: Sequence[ProbabilisticClassifier], seed: int = 0):
        super().__init__({}, seed)
        if not members:
            raise ModelConfigError("ensemble needs at least one fitted member")
        bad = [m.family.value for m in members if m.family not in ENSEMBLE_MEMBERS]
        if bad:
            raise ModelConfigError(f"ensemble members must be lr/rf/xgb/mlp, got {bad}")
        self.members = list(members)
        self.feature_names = sorted({n for m in self.members for n in m.feature_names})
        self.hp = {"members": [m.family.value for m in self.members]}
        self.fitted = all(m.fitted for m in self.members)

    def _fit(self, X, y, X_val, y_val):
        raise ModelConfigError("the ensemble is built from fitted members and is not refitted")

    def positive_proba(self, matrix) -> np.ndarray:
        return np.mean([m.positive_proba(m.project(matrix)) for m in self.members], axis=0)

    def raw_scores(self, matrix) -> np.ndarray:
        raise ModelConfigError("the ensemble is excluded from calibration")

    def project(self, matrix):
        return matrix


def ensemble_predict(models: Sequence[ProbabilisticClassifier], per_model_features: Sequence[Sequence[str]],
                     x) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean class probabilities over base models, each applied to its own columns.

    Args:
        models: Fitted base models
        per_model_features: Feature names each model reads
        x: FeatureMatrix holding at least the union of those features

    Returns:
        (probabilities [p(discarded), p(transplanted)], predicted labels)
    """
    if not models:
        raise ModelConfigError("ensemble needs at least one fitted member")
    p = np.mean([m.positive_proba(x.select_columns(list(f)).values)
                 for m, f in zip(models, per_model_features)], axis=0)
    return np.column_stack([1.0 - p, p]), predict_label(p)


def save_model(model: ProbabilisticClassifier, path: Union[str, Path]) -> Path:
    """Persist a fitted model with its family, hp, seed and feature names."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"meta": model.describe(), "model": model}, path)
    return path


def load_model(path: Union[str, Path]) -> ProbabilisticClassifier:
    blob = joblib.load(path)
    model = blob["model"]
    if blob["meta"]["family"] != model.family.value:
        raise ModelConfigError(f"model blob {path} is inconsistent with its metadata")
    return model
