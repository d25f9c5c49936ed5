"""Tests for the MLP classifier."""
import numpy as np
import pytest
import torch

from tools.mlp_tools import MLPModel, MLPNet, fit_mlp, gradient_check
from utils.errors import ModelConfigError


def _data(n=64, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 0] - X[:, 1] + rng.normal(scale=0.3, size=n) > 0).astype(int)
    return X, y


@pytest.mark.parametrize("n_layer, hidden_dim, batchnorm", [(1, 3, False), (2, 4, False), (2, 3, True)])
def test_gradients_match_finite_differences(n_layer, hidden_dim, batchnorm):
    torch.manual_seed(0)
    X, y = _data(n=12, d=3)
    net = MLPNet(3, n_layer, hidden_dim, dropout=0.2, batchnorm=batchnorm)
    assert gradient_check(net, X, y) <= 1e-4


def test_block_layout():
    net = MLPNet(5, 2, 8, dropout=0.1, batchnorm=True)
    kinds = [type(m) for m in net.hidden]
    assert kinds == [torch.nn.Linear, torch.nn.BatchNorm1d, torch.nn.ELU, torch.nn.Dropout] * 2
    assert net.output.out_features == 1
    plain = MLPNet(5, 1, 8)
    assert [type(m) for m in plain.hidden] == [torch.nn.Linear, torch.nn.ELU, torch.nn.Dropout]


def test_zeroed_output_layer_gives_half():
    model = MLPModel({}, seed=0)
    model.net = MLPNet(4, 2, 8)
    with torch.no_grad():
        model.net.output.weight.zero_()
        model.net.output.bias.zero_()
    X, _ = _data(n=10)
    np.testing.assert_allclose(model.positive_proba(X), 0.5)


def test_training_learns_and_is_seed_reproducible():
    X, y = _data(n=200)
    hp = {"n_layer": 1, "hidden_dim": 16, "init_lr": 0.01, "max_epochs": 60, "patience": 10, "batch_size": 32}
    first = fit_mlp(X[:160], y[:160], X[160:], y[160:], hp, seed=5)
    second = fit_mlp(X[:160], y[:160], X[160:], y[160:], hp, seed=5)
    np.testing.assert_array_equal(first.positive_proba(X), second.positive_proba(X))
    assert (first.predict(X[160:]) == y[160:]).mean() > 0.75
    assert first.history["val_loss"][first.best_epoch] == min(first.history["val_loss"])


def test_early_stopping_respects_patience():
    X, y = _data(n=120)
    hp = {"n_layer": 1, "hidden_dim": 32, "init_lr": 0.05, "max_epochs": 400, "patience": 3}
    model = fit_mlp(X[:100], y[:100], X[100:], y[100:], hp, seed=0)
    epochs = len(model.history["val_loss"])
    assert epochs == 400 or epochs - 1 - model.best_epoch == 3


def test_mlp_needs_validation_split():
    X, y = _data(n=20)
    with pytest.raises(ModelConfigError):
        MLPModel({"n_layer": 1, "hidden_dim": 4, "init_lr": 0.01}, seed=0).fit(X, y)


def test_class_weights_and_batchnorm_train():
    X, y = _data(n=90)
    hp = {"n_layer": 2, "hidden_dim": 8, "batchnorm": True, "class_weights": True, "dropout": 0.1,
          "init_lr": 0.01, "max_epochs": 10, "batch_size": 16}
    model = fit_mlp(X[:70], y[:70], X[70:], y[70:], hp, seed=1)
    p = model.positive_proba(X)
    assert p.shape == (90,)
    assert np.all((p >= 0.0) & (p <= 1.0))
