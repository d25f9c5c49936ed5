"""
Probability calibration: Brier score and its decomposition, Platt scaling,
isotonic regression and reliability curves.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.isotonic import IsotonicRegression

from utils.errors import CalibrationError, MetricError
from utils.logging import get_logger

logger = get_logger(__name__)

PLATT_MAX_ITER = 100
PLATT_GRAD_TOL = 1e-5
MIN_STEP = 1e-10
HESSIAN_RIDGE = 1e-12


def _check(p_pred: Sequence[float], y_true: Sequence[int]):
    p = np.asarray(p_pred, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.float64)
    if p.size == 0:
        raise MetricError("Brier score of an empty prediction set")
    if p.shape != y.shape:
        raise MetricError(f"prediction/label length mismatch: {p.shape} vs {y.shape}")
    return p, y


def brier(p_pred: Sequence[float], y_true: Sequence[int]) -> float:
    """Mean squared difference between probabilities and 0/1 outcomes."""
    p, y = _check(p_pred, y_true)
    return float(np.mean((p - y) ** 2))


@dataclass(frozen=True)
class PlattParams:
    """p = 1 / (1 + exp(-(a * s + b)))."""

    a: float
    b: float
    iterations: int = 0

    def to_dict(self) -> Dict[str, float]:
        return {"a": self.a, "b": self.b, "iterations": self.iterations}


def _platt_objective(a: float, b: float, s: np.ndarray, t: np.ndarray) -> float:
    z = a * s + b
    return float(np.sum(t * np.logaddexp(0.0, -z) + (1.0 - t) * np.logaddexp(0.0, z)))


def fit_platt(raw_scores: Sequence[float], y_true: Sequence[int], max_iter: int = PLATT_MAX_ITER) -> PlattParams:
    """
    Fit Platt scaling by Newton's method with backtracking line search.

    Targets are smoothed to (N+ + 1)/(N+ + 2) for positives and 1/(N- + 2)
    for negatives.

    Args:
        raw_scores: Validation raw scores
        y_true: Validation labels
        max_iter: Newton iteration cap

    Returns:
        PlattParams

    Raises:
        CalibrationError: On a single class, fewer than two distinct scores or
            no convergence; carries the last iterate
    """
    s = np.asarray(raw_scores, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.int64)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise CalibrationError("Platt scaling needs both classes in the validation set")
    if len(np.unique(s)) < 2:
        raise CalibrationError("Platt scaling needs at least two distinct scores (slope unidentifiable)")

    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, float(np.log((n_pos + 1.0) / (n_neg + 1.0)))
    value = _platt_objective(a, b, s, t)

    for iteration in range(1, max_iter + 1):
        p = expit(a * s + b)
        residual = p - t
        grad = np.array([np.dot(residual, s), residual.sum()])
        if np.max(np.abs(grad)) < PLATT_GRAD_TOL:
            return PlattParams(a, b, iteration - 1)
        w = p * (1.0 - p)
        hessian = np.array([[np.dot(w, s * s), np.dot(w, s)],
                            [np.dot(w, s), w.sum()]]) + HESSIAN_RIDGE * np.eye(2)
        direction = -np.linalg.solve(hessian, grad)
        slope = float(np.dot(grad, direction))

        step = 1.0
        while step >= MIN_STEP:
            a_new, b_new = a + step * direction[0], b + step * direction[1]
            new_value = _platt_objective(a_new, b_new, s, t)
            if new_value < value + 1e-4 * step * slope:
                break
            step /= 2.0
        else:
            raise CalibrationError("Platt line search failed", last_iterate=PlattParams(a, b, iteration))
        a, b, value = a_new, b_new, new_value

    raise CalibrationError(f"Platt scaling did not converge in {max_iter} iterations",
                           last_iterate=PlattParams(a, b, max_iter))


def apply_platt(params: PlattParams, raw_scores: Sequence[float]) -> np.ndarray:
    return expit(params.a * np.asarray(raw_scores, dtype=np.float64) + params.b)


@dataclass
class IsotonicMap:
    """Monotone non-decreasing step map from scores to probabilities, clamped at the ends."""

    regressor: IsotonicRegression = field(repr=False)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.regressor.X_thresholds_

    @property
    def values(self) -> np.ndarray:
        return self.regressor.y_thresholds_


def fit_isotonic(scores: Sequence[float], y_true: Sequence[int]) -> IsotonicMap:
    """
    Pool-adjacent-violators fit of labels against scores; tied scores are pooled.

    Raises:
        CalibrationError: With fewer than two samples
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.float64)
    if len(s) < 2:
        raise CalibrationError("isotonic calibration needs at least two samples")
    regressor = IsotonicRegression(y_min=0.0, y_max=1.0, increasing=True, out_of_bounds="clip")
    regressor.fit(s, y)
    return IsotonicMap(regressor)


def apply_isotonic(mapping: IsotonicMap, scores: Sequence[float]) -> np.ndarray:
    return np.clip(mapping.regressor.predict(np.asarray(scores, dtype=np.float64)), 0.0, 1.0)


@dataclass
class ReliabilityCurve:
    n_bins: int
    bins: List[int]
    mean_pred: np.ndarray
    frac_pos: np.ndarray
    counts: np.ndarray
    empty_bins: List[int]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin": self.bins, "mean_pred": self.mean_pred, "frac_pos": self.frac_pos,
                             "count": self.counts})


def _bin_index(p: np.ndarray, n_bins: int) -> np.ndarray:
    return np.minimum((p * n_bins).astype(np.int64), n_bins - 1)


def reliability_curve(p_pred: Sequence[float], y_true: Sequence[int], n_bins: int = 10) -> ReliabilityCurve:
    """Equal-width bins on [0, 1]; empty bins are left out of the curve and listed."""
    p, y = _check(p_pred, y_true)
    idx = _bin_index(p, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    filled = [k for k in range(n_bins) if counts[k] > 0]
    empty = [k for k in range(n_bins) if counts[k] == 0]
    if empty:
        logger.debug(f"Reliability curve: {len(empty)} of {n_bins} bins empty")
    mean_pred = np.array([p[idx == k].mean() for k in filled])
    frac_pos = np.array([y[idx == k].mean() for k in filled])
    return ReliabilityCurve(n_bins, filled, mean_pred, frac_pos, counts[filled], empty)


def brier_decomposition(p_pred: Sequence[float], y_true: Sequence[int], n_bins: int = 10) -> Dict[str, float]:
    """
    Split the Brier score over reliability bins into calibration,
    refinement, within-bin prediction variance and within-bin covariance;
    the four terms sum to the Brier score.
    """
    p, y = _check(p_pred, y_true)
    n = len(p)
    idx = _bin_index(p, n_bins)
    calibration = refinement = variance = covariance = 0.0
    for k in np.unique(idx):
        pk, yk = p[idx == k], y[idx == k]
        p_bar, o_bar = pk.mean(), yk.mean()
        calibration += len(pk) * (p_bar - o_bar) ** 2
        refinement += np.sum((yk - o_bar) ** 2)
        variance += np.sum((pk - p_bar) ** 2)
        covariance -= 2.0 * np.sum((pk - p_bar) * (yk - o_bar))
    return {"brier": brier(p, y), "calibration": calibration / n, "refinement": refinement / n,
            "within_variance": variance / n, "within_covariance": covariance / n}


def expected_calibration_error(p_pred: Sequence[float], y_true: Sequence[int], n_bins: int = 10) -> float:
    curve = reliability_curve(p_pred, y_true, n_bins)
    weights = curve.counts / curve.counts.sum()
    return float(np.sum(weights * np.abs(curve.mean_pred - curve.frac_pos)))


@dataclass
class CalibrationOutcome:
    """Uncalibrated, Platt and isotonic test probabilities of one model run."""

    family: str
    seed: int
    probabilities: Dict[str, np.ndarray]
    platt: Optional[PlattParams]
    isotonic: IsotonicMap
    y_test: np.ndarray

    def brier_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"model": self.family, "seed": self.seed}
        for method in ("uncalibrated", "platt", "isotonic"):
            p = self.probabilities.get(method)
            row[method] = float("nan") if p is None else brier(p, self.y_test)
        return row

    def ece_row(self, n_bins: int) -> Dict[str, object]:
        row: Dict[str, object] = {"model": self.family, "seed": self.seed}
        for method in ("uncalibrated", "platt", "isotonic"):
            p = self.probabilities.get(method)
            row[method] = float("nan") if p is None else expected_calibration_error(p, self.y_test, n_bins)
        return row


def calibrate_run(family: str, seed: int, val_raw: np.ndarray, y_val: np.ndarray, test_raw: np.ndarray,
                  test_p: np.ndarray, y_test: np.ndarray) -> CalibrationOutcome:
    """
    Fit Platt and isotonic maps on validation raw scores and apply them to
    the test raw scores. A failed Platt fit is logged and left out.
    """
    probabilities = {"uncalibrated": np.asarray(test_p, dtype=np.float64)}
    platt = None
    try:
        platt = fit_platt(val_raw, y_val)
        probabilities["platt"] = apply_platt(platt, test_raw)
    except CalibrationError as e:
        logger.warning(f"{family} seed {seed}: Platt scaling skipped ({e})")
    isotonic = fit_isotonic(val_raw, y_val)
    probabilities["isotonic"] = apply_isotonic(isotonic, test_raw)
    return CalibrationOutcome(family, seed, probabilities, platt, isotonic, np.asarray(y_test))
