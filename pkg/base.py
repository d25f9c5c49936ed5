"""
Base class for all benchmark classifiers.

Every model family (decision tree, elastic-net logistic regression, random
forest, gradient-boosted trees, MLP and the mean-probability ensemble)
implements the same probabilistic contract so the optimizer, evaluation,
calibration and explanation code never branch on the family.
"""

from abc import ABC, abstractmethod
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from utils.errors import ModelConfigError
from utils.logging import get_logger

# p(transplanted) at or above this is predicted "transplanted"; a 0.5 tie goes positive
DECISION_THRESHOLD = 0.5
LOGIT_EPS = 1e-6


class ModelFamily(str, Enum):
    DT = "dt"
    LR = "lr"
    RF = "rf"
    XGB = "xgb"
    MLP = "mlp"
    ENSEMBLE = "ensemble"


def predict_label(p_positive: np.ndarray, threshold: float = DECISION_THRESHOLD) -> np.ndarray:
    """Hard labels from positive-class probabilities (1 = transplanted)."""
    return (np.asarray(p_positive) >= threshold).astype(np.int64)


def clamped_logit(p: np.ndarray, eps: float = LOGIT_EPS) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


class ProbabilisticClassifier(ABC):
    """
    Binary classifier producing p(transplanted).

    Subclasses must implement:
    - _fit()
    - positive_proba()

    Optional implementations:
    - raw_scores() - pre-sigmoid score used for calibration
      (default: clamped logit of the probability)
    - importances() - model-specific feature importances

    Fitting with identical data, hyperparameters and seed must be
    bit-reproducible.
    """

    family: ModelFamily
    # Families that early-stop on a validation split
    needs_validation: bool = False

    def __init__(self, hp: Optional[Dict[str, Any]] = None, seed: int = 0):
        self.hp: Dict[str, Any] = dict(hp or {})
        self.seed = int(seed)
        self.feature_names: List[str] = []
        self.fitted = False
        self.logger = get_logger(self.__class__.__name__)

    def fit(self, X: np.ndarray, y: np.ndarray, X_val: Optional[np.ndarray] = None,
            y_val: Optional[np.ndarray] = None,
            feature_names: Optional[Sequence[str]] = None) -> "ProbabilisticClassifier":
        """
        Fit the model on a complete, standardized matrix.

        Args:
            X: Training features (n, d)
            y: Binary labels, 1 = transplanted
            X_val: Validation features for early stopping
            y_val: Validation labels
            feature_names: Column names of X

        Returns:
            self

        Raises:
            ModelConfigError: If the family needs a validation split and none is given
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if self.needs_validation and (X_val is None or y_val is None):
            raise ModelConfigError(f"{self.family.value} requires a validation split for early stopping")
        if X.ndim != 2 or len(X) != len(y):
            raise ModelConfigError(f"inconsistent training shapes X={X.shape} y={y.shape}")
        self.feature_names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        if X_val is not None:
            X_val = np.asarray(X_val, dtype=np.float64)
            y_val = np.asarray(y_val, dtype=np.int64)
        self._fit(X, y, X_val, y_val)
        self.fitted = True
        return self

    @abstractmethod
    def _fit(self, X: np.ndarray, y: np.ndarray, X_val: Optional[np.ndarray],
             y_val: Optional[np.ndarray]) -> None:
        """Family-specific training."""

    @abstractmethod
    def positive_proba(self, X: np.ndarray) -> np.ndarray:
        """p(transplanted) per row."""

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Columns [p(discarded), p(transplanted)]; rows sum to one."""
        p = np.clip(self.positive_proba(X), 0.0, 1.0)
        return np.column_stack([1.0 - p, p])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict_label(self.positive_proba(X))

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        return clamped_logit(self.positive_proba(X))

    def importances(self) -> Optional[Dict[str, float]]:
        return None

    def project(self, matrix) -> np.ndarray:
        """Columns of a FeatureMatrix in this model's training order."""
        return matrix.select_columns(self.feature_names).values

    def describe(self) -> Dict[str, Any]:
        return {"family": self.family.value, "hp": self.hp, "seed": self.seed,
                "feature_names": self.feature_names}

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(hp={self.hp}, seed={self.seed}, fitted={self.fitted})"
