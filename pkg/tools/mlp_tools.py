"""
Fully-connected network classifier (PyTorch) with early stopping, plus a
finite-difference gradient check.
"""
import copy
from typing import Dict, Optional

import numpy as np
import torch
from torch import nn

from base import ModelFamily, ProbabilisticClassifier
from utils.logging import get_logger

logger = get_logger(__name__)


class MLPNet(nn.Module):
    """n_layer x [Linear -> (BatchNorm) -> ELU -> Dropout] -> Linear(1) logit."""

    def __init__(self, n_inputs: int, n_layer: int, hidden_dim: int, dropout: float = 0.0,
                 batchnorm: bool = False):
        super().__init__()
        layers = []
        width = n_inputs
        for _ in range(n_layer):
            layers.append(nn.Linear(width, hidden_dim))
            if batchnorm:
                layers.append(nn.BatchNorm1d(hidden_dim))
            layers.append(nn.ELU())
            layers.append(nn.Dropout(dropout))
            width = hidden_dim
        self.hidden = nn.Sequential(*layers)
        self.output = nn.Linear(width, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.output(self.hidden(x)).squeeze(-1)


def _loss_fn(y: np.ndarray, class_weights: bool) -> nn.Module:
    if not class_weights:
        return nn.BCEWithLogitsLoss()
    n_pos = max(int(y.sum()), 1)
    n_neg = max(int(len(y) - y.sum()), 1)
    return nn.BCEWithLogitsLoss(pos_weight=torch.tensor(n_neg / n_pos, dtype=torch.float32))


class MLPModel(ProbabilisticClassifier):
    """MLP trained with AdamW on cross-entropy, early-stopped on validation loss."""

    family = ModelFamily.MLP
    needs_validation = True

    def __init__(self, hp: Optional[Dict] = None, seed: int = 0):
        super().__init__(hp, seed)
        self.net: Optional[MLPNet] = None
        self.history: Dict[str, list] = {"train_loss": [], "val_loss": []}
        self.best_epoch = -1

    def _fit(self, X, y, X_val, y_val):
        hp = self.hp
        torch.manual_seed(self.seed)
        generator = torch.Generator().manual_seed(self.seed)

        self.net = MLPNet(X.shape[1], int(hp["n_layer"]), int(hp["hidden_dim"]), float(hp.get("dropout", 0.0)),
                          bool(hp.get("batchnorm", False)))
        optimizer = torch.optim.AdamW(self.net.parameters(), lr=float(hp["init_lr"]),
                                      weight_decay=float(hp.get("weight_decay", 0.0)))
        loss_fn = _loss_fn(y, bool(hp.get("class_weights", False)))
        val_loss_fn = nn.BCEWithLogitsLoss()

        Xt = torch.as_tensor(X, dtype=torch.float32)
        yt = torch.as_tensor(y, dtype=torch.float32)
        Xv = torch.as_tensor(X_val, dtype=torch.float32)
        yv = torch.as_tensor(y_val, dtype=torch.float32)
        batch_size = int(hp.get("batch_size", 128))
        max_epochs = int(hp.get("max_epochs", 500))
        patience = int(hp.get("patience", 20))
        min_batch = 2 if hp.get("batchnorm") else 1

        best_loss, best_state, stale = np.inf, None, 0
        for epoch in range(max_epochs):
            self.net.train()
            order = torch.randperm(len(Xt), generator=generator)
            running = 0.0
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                if len(idx) < min_batch:
                    continue
                optimizer.zero_grad()
                loss = loss_fn(self.net(Xt[idx]), yt[idx])
                loss.backward()
                optimizer.step()
                running += float(loss) * len(idx)
            self.net.eval()
            with torch.no_grad():
                val_loss = float(val_loss_fn(self.net(Xv), yv))
            self.history["train_loss"].append(running / len(Xt))
            self.history["val_loss"].append(val_loss)

            if val_loss < best_loss:
                best_loss, best_state, stale = val_loss, copy.deepcopy(self.net.state_dict()), 0
                self.best_epoch = epoch
            else:
                stale += 1
                if stale >= patience:
                    break

        if best_state is not None:
            self.net.load_state_dict(best_state)
        self.net.eval()
        logger.debug(f"MLP stopped after {len(self.history['val_loss'])} epochs, "
                     f"best epoch {self.best_epoch} val loss {best_loss:.4f}")

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        self.net.eval()
        with torch.no_grad():
            logits = self.net(torch.as_tensor(np.asarray(X), dtype=torch.float32))
        return logits.double().numpy()

    def positive_proba(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.raw_scores(X)))


def fit_mlp(X, y, X_val, y_val, hp: Dict, seed: int, feature_names=None) -> MLPModel:
    """Validate hyperparameters and train an MLP."""
    from tools.model_tools import validate_hp

    params = validate_hp(ModelFamily.MLP, hp)
    return MLPModel(params, seed).fit(X, y, X_val, y_val, feature_names)


def gradient_check(net: nn.Module, X: np.ndarray, y: np.ndarray, eps: float = 1e-6,
                   floor: float = 1e-3) -> float:
    """
    Compare autograd gradients of the mean cross-entropy with central finite
    differences, parameter by parameter, in float64 with dropout disabled.

    Returns:
        Largest relative error |analytic - numeric| / max(|analytic|, |numeric|, floor)
    """
    model = copy.deepcopy(net).double()
    for module in model.modules():
        if isinstance(module, nn.Dropout):
            module.p = 0.0
    model.train()
    Xt = torch.as_tensor(X, dtype=torch.float64)
    yt = torch.as_tensor(y, dtype=torch.float64)
    loss_fn = nn.BCEWithLogitsLoss()

    model.zero_grad()
    loss_fn(model(Xt), yt).backward()
    worst = 0.0
    with torch.no_grad():
        for param in model.parameters():
            analytic = param.grad.detach().clone().reshape(-1)
            flat = param.data.view(-1)
            for k in range(flat.numel()):
                original = flat[k].item()
                flat[k] = original + eps
                plus = float(loss_fn(model(Xt), yt))
                flat[k] = original - eps
                minus = float(loss_fn(model(Xt), yt))
                flat[k] = original
                numeric = (plus - minus) / (2 * eps)
                a = float(analytic[k])
                error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, error)
    return worst
