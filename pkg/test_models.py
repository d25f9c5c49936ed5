"""Tests for the model families, hyperparameter validation, the ensemble and persistence."""
import numpy as np
import pytest

from base import ModelFamily, ProbabilisticClassifier, predict_label
from tools.dataset_tools import FeatureMatrix
from tools.model_tools import (
    EnsembleModel,
    ensemble_predict,
    fit_decision_tree,
    fit_gradient_boosting,
    fit_logreg_elasticnet,
    fit_random_forest,
    load_model,
    make_classifier,
    save_model,
    search_space,
    validate_hp,
)
from utils.errors import ModelConfigError


class ConstantModel(ProbabilisticClassifier):
    family = ModelFamily.LR

    def __init__(self, p, features):
        super().__init__({}, 0)
        self.p = p
        self.feature_names = list(features)
        self.fitted = True

    def _fit(self, X, y, X_val, y_val):
        pass

    def positive_proba(self, X):
        return np.full(len(X), self.p)


def _separable(n=20):
    x = np.linspace(-1.0, 1.0, n).reshape(-1, 1)
    return x, (x[:, 0] >= 0).astype(int)


def _frame(n=4, names=("a", "b")):
    return FeatureMatrix(np.zeros((n, len(names))), list(names), np.zeros(n, dtype=int), [f"D{i}" for i in range(n)])


def test_decision_tree_single_split():
    X, y = _separable()
    model = fit_decision_tree(X, y, {}, seed=0)
    assert (model.predict(X) == y).all()
    assert model.estimator.tree_.node_count == 3


def test_decision_tree_gini_of_root():
    X = np.arange(8.0).reshape(-1, 1)
    y = np.array([1, 1, 1, 1, 1, 1, 0, 0])
    model = fit_decision_tree(X, y, {"max_depth": 1}, seed=0)
    assert model.estimator.tree_.impurity[0] == pytest.approx(0.375)


def test_pure_node_is_leaf():
    X = np.arange(6.0).reshape(-1, 1)
    model = fit_decision_tree(X, np.ones(6, dtype=int), {"max_depth": 10}, seed=0)
    assert model.estimator.tree_.node_count == 1


def test_decision_tree_training_accuracy_grows_with_depth():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 4))
    y = (X[:, 0] * X[:, 1] + rng.normal(0.0, 0.3, size=200) > 0).astype(int)
    accuracies = []
    for depth in (1, 2, 3, 4, 6, 8, 12, None):
        model = fit_decision_tree(X, y, {"max_depth": depth}, seed=0)
        accuracies.append(float(np.mean(model.predict(X) == y)))
    assert all(b >= a for a, b in zip(accuracies, accuracies[1:]))
    assert accuracies[-1] == 1.0


@pytest.mark.parametrize("family, hp", [
    ("dt", {"min_samples_split": 1}),
    ("lr", {"C": 0.0}),
    ("lr", {"l1_ratio": 1.5}),
    ("rf", {"n_estimators": 0}),
    ("mlp", {"hidden_dim": 0}),
    ("mlp", {"n_layer": 0}),
    ("xgb", {"unknown_knob": 1}),
])
def test_invalid_hyperparameters(family, hp):
    with pytest.raises(ModelConfigError):
        validate_hp(family, hp)


def test_logreg_weak_penalty_separates():
    X = np.array([[-1.0], [1.0]])
    y = np.array([0, 1])
    model = fit_logreg_elasticnet(X, y, {"C": 1e4, "l1_ratio": 0.0, "max_iter": 5000}, seed=0)
    p = model.positive_proba(X)
    assert p[0] < 0.1 and p[1] > 0.9


def test_logreg_full_l1_shrinkage_predicts_prior():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 5))
    y = (rng.random(200) < 0.3).astype(int)
    model = fit_logreg_elasticnet(X, y, {"C": 1e-4, "l1_ratio": 1.0, "max_iter": 2000}, seed=0)
    assert np.all(model.estimator.coef_ == 0.0)
    np.testing.assert_allclose(model.positive_proba(X), y.mean(), atol=0.05)


def test_random_forest_seed_reproducible():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 4))
    y = (X[:, 0] + rng.normal(scale=0.5, size=80) > 0).astype(int)
    hp = {"n_estimators": 25}
    first = fit_random_forest(X, y, hp, seed=3).positive_proba(X)
    second = fit_random_forest(X, y, hp, seed=3).positive_proba(X)
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, fit_random_forest(X, y, hp, seed=4).positive_proba(X))


def test_boosting_requires_validation():
    X, y = _separable()
    with pytest.raises(ModelConfigError):
        make_classifier("xgb", {}, 0).fit(X, y)


def test_boosting_single_leaf_weight():
    X = np.zeros((4, 1))
    y = np.array([1, 1, 1, 0])
    hp = {"n_estimators": 1, "learning_rate": 1.0, "max_depth": 1, "min_child_weight": 0.0,
          "reg_alpha": 0.0, "reg_lambda": 0.0, "base_score": 0.5}
    model = fit_gradient_boosting(X, y, X, y, hp, seed=0)
    # g = p - y at p = 0.5, h = p(1 - p): -sum(g) / sum(h) = 1 / 1
    np.testing.assert_allclose(model.raw_scores(X), 1.0, atol=1e-5)


def test_boosting_zero_learning_rate_stops_early():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 3))
    y = (X[:, 0] > 0).astype(int)
    hp = {"n_estimators": 200, "learning_rate": 0.0, "early_stopping_rounds": 5}
    model = fit_gradient_boosting(X[:40], y[:40], X[40:], y[40:], hp, seed=0)
    losses = model.validation_loss
    assert len(losses) == 6
    assert np.ptp(losses) == pytest.approx(0.0, abs=1e-7)
    assert np.ptp(model.positive_proba(X)) == pytest.approx(0.0, abs=1e-7)


def test_boosting_best_iteration_improves_validation_loss():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 4))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(0.0, 0.5, size=300) > 0).astype(int)
    hp = {"n_estimators": 150, "learning_rate": 0.1, "max_depth": 2, "early_stopping_rounds": 10}
    model = fit_gradient_boosting(X[:200], y[:200], X[200:], y[200:], hp, seed=0)
    losses = model.validation_loss
    assert model.estimator.evals_result()["validation_0"]["logloss"] == losses
    assert model.best_iteration > 0
    assert losses[model.best_iteration] == pytest.approx(min(losses))
    assert losses[model.best_iteration] < losses[0]


def test_ensemble_mean_probability():
    x = _frame()
    models = [ConstantModel(p, ["a"]) for p in (0.6, 0.8, 0.7, 0.9)]
    proba, labels = ensemble_predict(models, [["a"]] * 4, x)
    np.testing.assert_allclose(proba[:, 1], 0.75)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert labels.tolist() == [1, 1, 1, 1]


def test_ensemble_tie_goes_transplanted():
    proba, labels = ensemble_predict([ConstantModel(0.4, ["a"]), ConstantModel(0.6, ["b"])], [["a"], ["b"]], _frame())
    np.testing.assert_allclose(proba[:, 1], 0.5)
    assert labels.tolist() == [1, 1, 1, 1]
    assert predict_label(np.array([0.5, 0.4999])).tolist() == [1, 0]


def test_ensemble_of_identical_members_is_member():
    member = ConstantModel(0.3, ["a"])
    model = EnsembleModel([member, ConstantModel(0.3, ["b"])])
    np.testing.assert_allclose(model.positive_proba(_frame()), member.positive_proba(np.zeros((4, 1))))
    assert model.feature_names == ["a", "b"]


def test_ensemble_rejects_empty_and_tree():
    with pytest.raises(ModelConfigError):
        ensemble_predict([], [], _frame())
    with pytest.raises(ModelConfigError):
        EnsembleModel([])
    tree = fit_decision_tree(*_separable(), {}, seed=0)
    with pytest.raises(ModelConfigError):
        EnsembleModel([tree])


def test_search_space_sampling_and_overrides():
    space = search_space("mlp", {"hidden_dim": [16, 64], "n_layer": [1, 2]})
    rng = np.random.default_rng(0)
    for _ in range(50):
        point = space.sample(rng)
        assert space.contains(point)
        assert 16 <= point["hidden_dim"] <= 64 and point["n_layer"] in (1, 2)
        validate_hp("mlp", point)
    with pytest.raises(ModelConfigError):
        search_space("lr", {"depth": [1, 2]})
    with pytest.raises(ModelConfigError):
        search_space("ensemble")


def test_xgb_space_steps():
    space = search_space("xgb")
    rng = np.random.default_rng(1)
    for _ in range(20):
        point = space.sample(rng)
        assert point["n_estimators"] % 50 == 0
        assert point["early_stopping_rounds"] % 5 == 0


def test_model_persistence(tmp_path):
    X, y = _separable()
    model = fit_random_forest(X, y, {"n_estimators": 5}, seed=1, feature_names=["x"])
    path = save_model(model, tmp_path / "models" / "rf.joblib")
    loaded = load_model(path)
    assert loaded.describe() == model.describe()
    np.testing.assert_array_equal(loaded.positive_proba(X), model.positive_proba(X))
