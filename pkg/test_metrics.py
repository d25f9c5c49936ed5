"""Tests for confusion counts, F1, MCC, normed MCC and AUC."""
import math

import numpy as np
import pytest

from tools.metric_tools import ConfusionCounts, auc, confusion, f1, mcc, normed_mcc, score_predictions
from utils.errors import MetricError


def _brute_auc(y, s):
    pos = [v for v, label in zip(s, y) if label == 1]
    neg = [v for v, label in zip(s, y) if label == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_confusion_counts():
    assert confusion([1, 1, 0, 0], [0.9, 0.8, 0.1, 0.2]) == ConfusionCounts(tp=2, tn=2, fp=0, fn=0)
    assert confusion([1, 0], [0.4, 0.6]) == ConfusionCounts(tp=0, tn=0, fp=1, fn=1)


def test_half_probability_predicted_transplanted():
    c = confusion([1, 0, 1], [0.5, 0.5, 0.5])
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 0, 0)


@pytest.mark.parametrize("y, p", [([], []), ([1, 0], [0.5]), ([1], [1.2]), ([0], [float("nan")])])
def test_confusion_rejects_bad_input(y, p):
    with pytest.raises(MetricError):
        confusion(y, p)


def test_perfect_scores():
    c = ConfusionCounts(tp=5, tn=5, fp=0, fn=0)
    assert (f1(c), mcc(c), normed_mcc(c)) == (1.0, 1.0, 1.0)


def test_unbalanced_counts():
    c = ConfusionCounts(tp=90, tn=1, fp=4, fn=5)
    assert f1(c) == pytest.approx(0.952381, abs=1e-6)
    assert mcc(c) == pytest.approx(70.0 / math.sqrt(94 * 95 * 5 * 6))
    assert mcc(c) == pytest.approx(0.1352, abs=1e-4)
    assert normed_mcc(c) == pytest.approx(0.5676, abs=1e-4)


def test_anti_perfect():
    c = confusion([1, 1, 0, 0], [0.1, 0.2, 0.9, 0.8])
    assert mcc(c) == pytest.approx(-1.0)
    assert normed_mcc(c) == pytest.approx(0.0)


def test_degenerate_conventions():
    all_positive = ConfusionCounts(tp=3, tn=0, fp=2, fn=0)
    assert mcc(all_positive) == 0.0
    assert normed_mcc(all_positive) == 0.5
    assert f1(ConfusionCounts(tp=0, tn=4, fp=0, fn=0)) == 0.0


def test_mcc_matches_correlation_on_random_counts():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(1, 50, size=4))
        c = ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)
        y = np.array([1] * tp + [0] * tn + [0] * fp + [1] * fn)
        pred = np.array([1] * tp + [0] * tn + [1] * fp + [0] * fn)
        assert mcc(c) == pytest.approx(np.corrcoef(y, pred)[0, 1], abs=1e-12)
        assert f1(c) == pytest.approx(2 * tp / (2 * tp + fp + fn), abs=1e-12)
        assert normed_mcc(c) == (mcc(c) + 1.0) / 2.0
        assert 0.0 <= normed_mcc(c) <= 1.0


def test_auc_examples():
    assert auc([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1]) == pytest.approx(0.75)
    assert auc([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4]) == 1.0
    assert auc([0, 1, 0, 1], [0.3] * 4) == 0.5
    with pytest.raises(MetricError):
        auc([1, 1], [0.2, 0.3])


def test_auc_matches_pairwise_count_and_complement():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(4, 30))
        y = rng.integers(0, 2, size=n)
        if len(np.unique(y)) < 2:
            continue
        s = np.round(rng.random(n), 1)
        assert auc(y, s) == pytest.approx(_brute_auc(y, s), abs=1e-12)
        tie_free = rng.random(n)
        assert auc(y, tie_free) + auc(1 - y, tie_free) == pytest.approx(1.0, abs=1e-12)


def test_score_predictions_single_class_has_nan_auc():
    scores = score_predictions([1, 1, 1], [0.9, 0.7, 0.2])
    assert math.isnan(scores["auc"])
    assert scores["f1"] == pytest.approx(0.8)
