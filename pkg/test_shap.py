"""Tests for exact and permutation Shapley attributions and their aggregation."""
import numpy as np
import pytest
from scipy.special import expit

from tools.model_tools import fit_logreg_elasticnet
from tools.shap_tools import (
    Attribution,
    aggregate_global,
    background_sample,
    beeswarm_arrays,
    beeswarm_rows,
    exact_shap,
    explain_samples,
    model_specific_importance,
    permutation_shap,
    render_beeswarm,
    render_importance_bar,
)
from utils.errors import ExplainError


def _linear(w):
    w = np.asarray(w, dtype=float)
    return lambda X: X @ w


def test_constant_model_gets_no_credit():
    background = np.random.default_rng(0).normal(size=(10, 3))
    for attribution in (exact_shap(lambda X: np.full(len(X), 0.3), np.ones(3), background),
                        permutation_shap(lambda X: np.full(len(X), 0.3), np.ones(3), background, 3, seed=0)):
        np.testing.assert_allclose(attribution.values, 0.0, atol=1e-12)
        assert attribution.base_value == pytest.approx(0.3)


@pytest.mark.parametrize("n_permutations", [1, 4])
def test_additive_model_closed_form(n_permutations):
    rng = np.random.default_rng(1)
    w = np.array([0.5, -1.0, 2.0, 0.0])
    background = rng.normal(size=(25, 4))
    x = rng.normal(size=4)
    expected = w * (x - background.mean(axis=0))
    np.testing.assert_allclose(exact_shap(_linear(w), x, background).values, expected, atol=1e-9)
    sampled = permutation_shap(_linear(w), x, background, n_permutations, seed=3)
    np.testing.assert_allclose(sampled.values, expected, atol=1e-9)


def test_interaction_split_equally():
    attribution = exact_shap(lambda X: X[:, 0] * X[:, 1], np.array([1.0, 1.0]), np.zeros((1, 2)))
    np.testing.assert_allclose(attribution.values, [0.5, 0.5])
    sampled = permutation_shap(lambda X: X[:, 0] * X[:, 1], np.array([1.0, 1.0]), np.zeros((1, 2)), 2, seed=0)
    np.testing.assert_allclose(sampled.values, [0.5, 0.5])


def test_single_feature_takes_all():
    f = lambda X: expit(X[:, 0])  # noqa: E731
    attribution = exact_shap(f, np.array([2.0]), np.array([[0.0], [1.0]]))
    assert attribution.values[0] == pytest.approx(attribution.output - attribution.base_value)
    assert attribution.output == pytest.approx(expit(2.0))


def _random_model(seed, d=6):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    pairs = rng.normal(size=(d, d))
    return lambda X: expit(X @ w + 0.5 * np.einsum("ni,ij,nj->n", X, pairs, X))


def test_exact_properties():
    rng = np.random.default_rng(2)
    background = rng.normal(size=(15, 6))
    x = rng.normal(size=6)
    f = _random_model(0)
    attribution = exact_shap(f, x, background)
    assert attribution.additivity_gap() <= 1e-9

    ignores_last = exact_shap(lambda X: expit(X[:, 0] - X[:, 1] * X[:, 2]), x, background)
    assert ignores_last.values[5] == pytest.approx(0.0, abs=1e-12)

    duplicated = np.column_stack([background[:, :2], background[:, :1]])
    x_dup = np.array([x[0], x[1], x[0]])
    symmetric = exact_shap(lambda X: expit(X[:, 0] + X[:, 2] + X[:, 1]), x_dup, duplicated)
    assert symmetric.values[0] == pytest.approx(symmetric.values[2], abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sampler_agrees_with_exact(seed):
    rng = np.random.default_rng(10 + seed)
    background = rng.normal(size=(20, 6))
    x = rng.normal(size=6)
    f = _random_model(seed)
    exact = exact_shap(f, x, background)
    sampled = permutation_shap(f, x, background, n_permutations=60, seed=seed)
    assert np.all(np.abs(sampled.values - exact.values) <= 4.0 * sampled.std_error + 1e-9)


def test_every_pass_telescopes():
    rng = np.random.default_rng(4)
    background = rng.normal(size=(10, 5))
    attribution = permutation_shap(_random_model(3, d=5), rng.normal(size=5), background, 5, seed=1)
    assert attribution.pass_values.shape == (10, 5)
    np.testing.assert_allclose(attribution.pass_values.sum(axis=1), attribution.output - attribution.base_value,
                               atol=1e-12)


def test_sampling_reproducible_with_seed():
    rng = np.random.default_rng(5)
    background, x = rng.normal(size=(10, 6)), rng.normal(size=6)
    first = permutation_shap(_random_model(1), x, background, 3, seed=9)
    second = permutation_shap(_random_model(1), x, background, 3, seed=9)
    np.testing.assert_array_equal(first.values, second.values)


def test_explainer_errors():
    with pytest.raises(ExplainError, match="permutation_shap"):
        exact_shap(_linear(np.ones(13)), np.ones(13), np.zeros((2, 13)))
    with pytest.raises(ExplainError):
        permutation_shap(_linear([1.0]), np.ones(1), np.zeros((2, 1)), n_permutations=0)
    with pytest.raises(ExplainError):
        permutation_shap(_linear([1.0]), np.ones(1), np.zeros((0, 1)))


def _attr(values, names=("f1", "f2")):
    return Attribution(np.asarray(values, dtype=float), 0.0, float(np.sum(values)), list(names))


def test_aggregation_rules():
    single = aggregate_global([_attr([0.3, -0.1])])
    np.testing.assert_allclose(single.mean_abs, [0.3, 0.1])
    np.testing.assert_allclose(single.std_abs, 0.0)
    zeros = aggregate_global([_attr([0.0, 0.0]), _attr([0.0, 0.0])])
    np.testing.assert_allclose(zeros.mean_abs, 0.0)

    importance = aggregate_global([_attr([0.2, 0.1]), _attr([-0.2, 0.1]), _attr([0.2, 0.1])])
    assert importance.ranking() == ["f1", "f2"]
    np.testing.assert_allclose(importance.mean_abs, [0.2, 0.1])
    assert importance.top_k(1)["feature"].tolist() == ["f1"]

    with pytest.raises(ExplainError):
        aggregate_global([_attr([0.1, 0.2]), _attr([0.1, 0.2], names=("f1", "f3"))])


def test_beeswarm_export(tmp_path):
    attributions = [_attr([0.2, -0.1]), _attr([0.05, 0.3])]
    raw = np.array([[70.0, 1.2], [45.0, 0.8]])
    rows = beeswarm_rows(attributions, raw, ["D001", "D002"])
    assert len(rows) == 4
    phi, values, names = beeswarm_arrays(rows)
    np.testing.assert_array_equal(phi, [[0.2, -0.1], [0.05, 0.3]])
    np.testing.assert_array_equal(values, raw)
    assert names == ["f1", "f2"]
    assert render_beeswarm(phi, values, names, tmp_path / "beeswarm.svg").read_text().lstrip().startswith("<?xml")
    bar = render_importance_bar(aggregate_global(attributions), tmp_path / "bar.svg", top_k=2, title="lr")
    assert bar.exists()


def test_beeswarm_svg_reproducible(tmp_path):
    import tools.report_tools  # noqa: F401  (sets the SVG hash salt)

    rng = np.random.default_rng(3)
    phi, raw = rng.normal(size=(60, 3)), rng.normal(size=(60, 3))
    names = ["age", "creatinine__slope", "urea__last"]
    first = render_beeswarm(phi, raw, names, tmp_path / "a.svg").read_bytes()
    np.random.seed(12345)
    state = np.random.get_state()[1].copy()
    second = render_beeswarm(phi, raw, names, tmp_path / "b.svg").read_bytes()
    assert first == second
    np.testing.assert_array_equal(np.random.get_state()[1], state)


def test_background_sample_seeded():
    X = np.arange(500.0).reshape(-1, 2)
    first = background_sample(X, 50, seed=1)
    assert first.shape == (50, 2)
    np.testing.assert_array_equal(first, background_sample(X, 50, seed=1))
    assert background_sample(X, 1000, seed=1).shape == X.shape


def test_shap_ranking_agrees_with_coefficients():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(400, 6))
    y = (rng.random(400) < expit(3.0 * X[:, 0] - 2.0 * X[:, 1] + 1.2 * X[:, 2])).astype(int)
    names = [f"f{j}" for j in range(6)]
    model = fit_logreg_elasticnet(X[:300], y[:300], {"C": 1.0, "l1_ratio": 0.5}, seed=0, feature_names=names)
    background = background_sample(X[:300], 50, seed=0)
    attributions = explain_samples(model.positive_proba, X[300:340], background, names, n_permutations=4, seed=0)
    shap_top = set(aggregate_global(attributions).ranking()[:3])
    native = model_specific_importance(model, X[:300])
    native_top = set(sorted(native, key=lambda name: -native[name])[:3])
    assert shap_top == native_top == {"f0", "f1", "f2"}
