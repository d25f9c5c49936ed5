"""
Imputation plan: per-feature strategy assignment from a pattern config,
train-only fitting and application to any split.
"""
import fnmatch
import re
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from sklearn.exceptions import ConvergenceWarning
from sklearn.experimental import enable_iterative_imputer  # noqa: F401
from sklearn.impute import IterativeImputer
from sklearn.linear_model import Ridge

from tools.dataset_tools import FeatureMatrix
from utils.errors import ImputationPlanError
from utils.logging import get_logger

logger = get_logger(__name__)

Strategy = Literal["logical_default", "missing_category", "config_rule", "normal_sample",
                   "dichotomize", "iterative", "mean"]

CENTRAL_Z = 1.96
MAX_DRAWS = 1000


class ConfigRule(BaseModel):
    """Regex on a source text field -> value for the target feature.

    With `value` unset the first capture group is parsed as a number.
    """

    regex: str
    value: Optional[float] = None


class StrategyEntry(BaseModel):
    pattern: str
    strategy: Strategy
    value: Optional[float] = None
    source: Optional[str] = None
    rules: List[ConfigRule] = Field(default_factory=list)
    default: Optional[float] = None


class IterativeConfig(BaseModel):
    max_iter: int = Field(10, ge=1)
    tol: float = Field(1e-3, gt=0.0)
    ridge_alpha: float = Field(1.0, ge=0.0)


class StrategyConfig(BaseModel):
    """Ordered pattern -> strategy entries; the first matching pattern wins."""

    strategies: List[StrategyEntry] = Field(default_factory=list)
    drop_threshold: float = Field(0.70, gt=0.0, le=1.0)
    iterative: IterativeConfig = IterativeConfig()
    normal_fit: Literal["train", "per_split"] = "train"

    def match(self, feature: str) -> Optional[StrategyEntry]:
        for entry in self.strategies:
            if fnmatch.fnmatchcase(feature, entry.pattern):
                return entry
        return None


def apply_config_rules(static: Mapping, target: str, entry: StrategyEntry) -> Optional[float]:
    """
    Backfill a missing raw field from a free-text source field.

    Returns the present value unchanged, the value of the first matching rule,
    or the entry default.
    """
    present = static.get(target)
    if present is not None and not isinstance(present, str):
        return float(present)
    text = static.get(entry.source) if entry.source else None
    if isinstance(text, str):
        for rule in entry.rules:
            found = re.search(rule.regex, text, flags=re.IGNORECASE)
            if found is None:
                continue
            if rule.value is not None:
                return rule.value
            try:
                return float(found.group(1))
            except (IndexError, TypeError, ValueError):
                logger.debug(f"Rule '{rule.regex}' matched '{target}' without a numeric group")
    return entry.default


def sample_central(rng: np.random.Generator, mu: float, sigma: float, z: float = CENTRAL_Z,
                   max_draws: int = MAX_DRAWS) -> float:
    """Draw from N(mu, sigma) restricted to mu +/- z*sigma by rejection, clamping after max_draws."""
    if not sigma > 0:
        return mu
    low, high = mu - z * sigma, mu + z * sigma
    for _ in range(max_draws):
        value = rng.normal(mu, sigma)
        if low <= value <= high:
            return float(value)
    return float(np.clip(value, low, high))


def _cell_rng(seed: int, donor_id: str, feature: str) -> np.random.Generator:
    entropy = [seed, zlib.crc32(donor_id.encode("utf-8")), zlib.crc32(feature.encode("utf-8"))]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class ImputationPlan:
    """Train-fitted imputation state; apply with `impute`."""

    input_names: List[str]
    strategies: Dict[str, str]
    dichotomized: List[str]
    fill_values: Dict[str, float]
    normal_params: Dict[str, Tuple[float, float]]
    means: Dict[str, float]
    seed: int
    normal_fit: str = "train"
    iterative: Optional[IterativeImputer] = field(default=None, repr=False)
    iterative_rounds: int = 0

    @property
    def output_names(self) -> List[str]:
        dropped = set(self.dichotomized)
        return [f"{n}__missing" if n in dropped else n for n in self.input_names]


def _missing_fraction(values: np.ndarray) -> np.ndarray:
    if values.shape[0] == 0:
        return np.zeros(values.shape[1])
    return np.isnan(values).mean(axis=0)


def _prefill(plan: ImputationPlan, matrix: FeatureMatrix) -> Tuple[np.ndarray, List[str], Dict[str, str]]:
    """Apply every non-iterative strategy; return values, names and types."""
    values = matrix.values.copy()
    names = plan.output_names
    types = {}
    for j, name in enumerate(matrix.feature_names):
        types[names[j]] = matrix.feature_types.get(name, "numeric")
        if name in plan.dichotomized:
            values[:, j] = np.isnan(matrix.values[:, j]).astype(np.float64)
            types[names[j]] = "indicator"
            continue
        column = values[:, j]
        missing = np.isnan(column)
        if not missing.any():
            continue
        strategy = plan.strategies.get(name)
        if strategy in ("logical_default", "missing_category", "config_rule"):
            column[missing] = plan.fill_values[name]
        elif strategy == "normal_sample":
            if plan.normal_fit == "per_split" and (~missing).sum() > 1:
                mu, sigma = float(np.mean(column[~missing])), float(np.std(column[~missing], ddof=1))
            else:
                mu, sigma = plan.normal_params[name]
            for i in np.flatnonzero(missing):
                column[i] = sample_central(_cell_rng(plan.seed, matrix.donor_ids[i], name), mu, sigma)
    return values, names, types


def fit_imputation_plan(train: FeatureMatrix, strategy_config: StrategyConfig, seed: int = 0) -> ImputationPlan:
    """
    Assign a strategy to every feature incomplete on the training split and
    fit the strategy parameters on training rows only.

    Features missing above `drop_threshold` are dichotomized into a
    missingness indicator whatever their configured strategy. Features
    complete on train fall back to the train mean should they be missing
    elsewhere.

    Args:
        train: Training feature matrix (may contain NaN)
        strategy_config: Pattern -> strategy config
        seed: Seed for normal-sample draws

    Returns:
        ImputationPlan

    Raises:
        ImputationPlanError: If an incomplete feature matches no pattern
    """
    fraction = _missing_fraction(train.values)
    strategies: Dict[str, str] = {}
    dichotomized: List[str] = []
    fill_values: Dict[str, float] = {}
    normal_params: Dict[str, Tuple[float, float]] = {}
    unassigned: List[str] = []

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        col_means = np.nanmean(train.values, axis=0) if train.values.size else np.zeros(len(train.feature_names))
    means = {n: float(0.0 if np.isnan(m) else m) for n, m in zip(train.feature_names, col_means)}

    for j, name in enumerate(train.feature_names):
        if fraction[j] == 0.0:
            continue
        if fraction[j] > strategy_config.drop_threshold:
            dichotomized.append(name)
            strategies[name] = "dichotomize"
            continue
        entry = strategy_config.match(name)
        if entry is None:
            unassigned.append(name)
            continue
        strategies[name] = entry.strategy
        if entry.strategy == "dichotomize":
            dichotomized.append(name)
        elif entry.strategy == "logical_default":
            fill_values[name] = 0.0 if entry.value is None else entry.value
        elif entry.strategy in ("missing_category", "config_rule"):
            # remaining gaps after encoding-time handling
            fill_values[name] = entry.default if entry.default is not None else (entry.value or 0.0)
        elif entry.strategy == "normal_sample":
            observed = train.values[~np.isnan(train.values[:, j]), j]
            sigma = float(np.std(observed, ddof=1)) if len(observed) > 1 else 0.0
            normal_params[name] = (float(np.mean(observed)), sigma)
        elif entry.strategy == "mean":
            fill_values[name] = means[name]

    if unassigned:
        raise ImputationPlanError(f"no imputation strategy for {len(unassigned)} incomplete features: "
                                  f"{unassigned[:10]}")

    plan = ImputationPlan(list(train.feature_names), strategies, dichotomized, fill_values,
                          normal_params, means, seed, strategy_config.normal_fit)

    iterative_features = [n for n, s in strategies.items() if s == "iterative"]
    if iterative_features:
        values, _, _ = _prefill(plan, train)
        cfg = strategy_config.iterative
        imputer = IterativeImputer(estimator=Ridge(alpha=cfg.ridge_alpha), max_iter=cfg.max_iter, tol=cfg.tol,
                                   imputation_order="ascending", initial_strategy="mean",
                                   skip_complete=True, keep_empty_features=True, random_state=seed)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", category=ConvergenceWarning)
            imputer.fit(values)
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            logger.warning(f"Iterative imputation did not converge in {cfg.max_iter} rounds; keeping last iterate")
        plan.iterative = imputer
        plan.iterative_rounds = int(imputer.n_iter_)

    counts: Dict[str, int] = {}
    for s in strategies.values():
        counts[s] = counts.get(s, 0) + 1
    logger.info(f"Imputation plan: {len(strategies)} incomplete features {counts}, "
                f"iterative rounds={plan.iterative_rounds}")
    return plan


def impute(plan: ImputationPlan, matrix: FeatureMatrix) -> FeatureMatrix:
    """
    Apply a fitted plan. The result has no missing values.

    Raises:
        ValueError: If the matrix schema differs from the plan's
    """
    if list(matrix.feature_names) != plan.input_names:
        raise ValueError("matrix features do not match the imputation plan schema")

    values, names, types = _prefill(plan, matrix)
    if plan.iterative is not None and np.isnan(values).any():
        values = plan.iterative.transform(values)

    # test-only gaps
    missing = np.isnan(values)
    if missing.any():
        fallback = np.array([plan.means.get(n, 0.0) for n in plan.input_names])
        values[missing] = np.broadcast_to(fallback, values.shape)[missing]
        logger.debug(f"Filled {int(missing.sum())} cells with train means")
    return matrix.with_values(values, names, types)


def drop_redundant_constant(matrix: FeatureMatrix) -> Tuple[FeatureMatrix, List[str]]:
    """
    Remove constant columns and exact duplicates.

    Duplicates are detected on bitwise-equal values; of each duplicate group
    the name-order first column is kept.

    Returns:
        (reduced matrix, dropped feature names)
    """
    values = matrix.values
    dropped = set()
    if values.shape[0] > 0:
        constant = np.ptp(values, axis=0) == 0
        dropped.update(n for n, c in zip(matrix.feature_names, constant) if c)

    seen: Dict[bytes, str] = {}
    position = {n: j for j, n in enumerate(matrix.feature_names)}
    for name in sorted(matrix.feature_names):
        if name in dropped:
            continue
        key = np.ascontiguousarray(values[:, position[name]]).tobytes()
        if key in seen:
            dropped.add(name)
        else:
            seen[key] = name

    kept = [n for n in matrix.feature_names if n not in dropped]
    if dropped:
        logger.info(f"Dropped {len(dropped)} constant or duplicate features")
    return matrix.select_columns(kept), sorted(dropped)
