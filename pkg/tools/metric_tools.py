"""
Discrimination metrics on the transplanted-positive convention.
"""
import math
from dataclasses import asdict, dataclass
from typing import Dict, Sequence

import numpy as np
from sklearn.metrics import roc_auc_score

from base import DECISION_THRESHOLD
from utils.errors import MetricError

# Fixed report order
METRICS = ("f1", "auc", "normed_mcc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


def confusion(y_true: Sequence[int], p_pred: Sequence[float], threshold: float = DECISION_THRESHOLD) -> ConfusionCounts:
    """
    Confusion counts with p >= threshold predicted positive (transplanted).

    Raises:
        MetricError: On empty input, length mismatch or probabilities outside [0, 1]
    """
    y = np.asarray(y_true).astype(np.int64)
    p = np.asarray(p_pred, dtype=np.float64)
    if y.size == 0:
        raise MetricError("confusion of an empty prediction set")
    if y.shape != p.shape:
        raise MetricError(f"label/prediction length mismatch: {y.shape} vs {p.shape}")
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise MetricError("probabilities must lie in [0, 1]")
    pred = p >= threshold
    pos = y == 1
    return ConfusionCounts(tp=int(np.sum(pred & pos)), tn=int(np.sum(~pred & ~pos)),
                           fp=int(np.sum(pred & ~pos)), fn=int(np.sum(~pred & pos)))


def f1(c: ConfusionCounts) -> float:
    denominator = 2 * c.tp + c.fp + c.fn
    return 0.0 if denominator == 0 else 2.0 * c.tp / denominator


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any confusion marginal is zero."""
    marginals = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if marginals == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(marginals)


def normed_mcc(c: ConfusionCounts) -> float:
    return (mcc(c) + 1.0) / 2.0


def auc(y_true: Sequence[int], scores: Sequence[float]) -> float:
    """
    Rank AUC, ties counted as one half.

    Raises:
        MetricError: If only one class is present
    """
    y = np.asarray(y_true).astype(np.int64)
    if len(np.unique(y)) < 2:
        raise MetricError("AUC needs both classes")
    return float(roc_auc_score(y, np.asarray(scores, dtype=np.float64)))


def score_predictions(y_true: Sequence[int], p_pred: Sequence[float]) -> Dict[str, float]:
    """F1, AUC, normed MCC and raw MCC of positive-class probabilities."""
    counts = confusion(y_true, p_pred)
    try:
        auc_value = auc(y_true, p_pred)
    except MetricError:
        auc_value = float("nan")
    return {"f1": f1(counts), "auc": auc_value, "normed_mcc": normed_mcc(counts), "mcc": mcc(counts)}
