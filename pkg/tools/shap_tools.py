"""
Shapley attributions of positive-class probabilities: antithetic
permutation sampling, exact subset enumeration for small inputs, global
aggregation and plot export.
"""
from dataclasses import dataclass
from itertools import combinations
from math import factorial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import shap  # noqa: E402
from joblib import Parallel, delayed  # noqa: E402

from base import ModelFamily, ProbabilisticClassifier  # noqa: E402
from utils.errors import ExplainError  # noqa: E402
from utils.logging import get_logger  # noqa: E402
from utils.seeding import derive_seed  # noqa: E402

logger = get_logger(__name__)

PredictFn = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_FEATURES = 12


@dataclass
class Attribution:
    """phi per feature, base value E[f(background)] and f(x)."""

    values: np.ndarray
    base_value: float
    output: float
    feature_names: List[str]
    std_error: Optional[np.ndarray] = None
    pass_values: Optional[np.ndarray] = None

    def additivity_gap(self) -> float:
        return float(abs(self.values.sum() - (self.output - self.base_value)))


def _coalition_values(predict: PredictFn, x: np.ndarray, background: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """v(S) = mean over background rows of f with the features in S taken from x."""
    n_bg, d = background.shape
    hybrids = np.repeat(background[None, :, :], len(masks), axis=0)
    hybrids = np.where(masks[:, None, :], x[None, None, :], hybrids)
    out = np.asarray(predict(hybrids.reshape(-1, d)), dtype=np.float64)
    return out.reshape(len(masks), n_bg).mean(axis=1)


def _prepare(x, background, feature_names):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ExplainError("background set is empty")
    if background.shape[1] != x.size:
        raise ExplainError(f"background has {background.shape[1]} features, sample has {x.size}")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(x.size)]
    return x, background, names


def exact_shap(predict: PredictFn, x: np.ndarray, background: np.ndarray,
               feature_names: Optional[Sequence[str]] = None) -> Attribution:
    """
    Exact Shapley values by enumerating all feature subsets.

    Raises:
        ExplainError: With more than 12 features (use permutation_shap)
    """
    x, background, names = _prepare(x, background, feature_names)
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise ExplainError(f"exact enumeration is limited to {MAX_EXACT_FEATURES} features, got {d}; "
                           f"use permutation_shap")
    codes = np.arange(2 ** d)
    masks = ((codes[:, None] >> np.arange(d)) & 1).astype(bool)
    v = _coalition_values(predict, x, background, masks)
    sizes = masks.sum(axis=1)
    weight = np.array([factorial(s) * factorial(d - s - 1) / factorial(d) if s < d else 0.0 for s in sizes])

    phi = np.zeros(d)
    for i in range(d):
        without = ~masks[:, i]
        with_i = codes[without] | (1 << i)
        phi[i] = np.sum(weight[without] * (v[with_i] - v[codes[without]]))
    return Attribution(phi, float(v[0]), float(v[-1]), names)


def permutation_shap(predict: PredictFn, x: np.ndarray, background: np.ndarray, n_permutations: int = 10,
                     seed: int = 0, feature_names: Optional[Sequence[str]] = None) -> Attribution:
    """
    Antithetic permutation estimate of Shapley values.

    Each sampled ordering is walked forward and then backward, crediting each
    feature with the change in v as it joins the coalition. Every pass
    telescopes to f(x) - base. The standard error comes from the spread of
    the forward/backward pair averages.

    Raises:
        ExplainError: If n_permutations < 1 or the background is empty
    """
    if n_permutations < 1:
        raise ExplainError(f"n_permutations must be at least 1, got {n_permutations}")
    x, background, names = _prepare(x, background, feature_names)
    d = x.size
    rng = np.random.default_rng(seed)

    passes = []
    base = output = None
    for _ in range(n_permutations):
        order = rng.permutation(d)
        for walk in (order, order[::-1]):
            masks = np.zeros((d + 1, d), dtype=bool)
            for k, feature in enumerate(walk):
                masks[k + 1:, feature] = True
            v = _coalition_values(predict, x, background, masks)
            marginal = np.empty(d)
            marginal[walk] = np.diff(v)
            passes.append(marginal)
            base, output = float(v[0]), float(v[-1])

    pass_values = np.array(passes)
    pairs = pass_values.reshape(n_permutations, 2, d).mean(axis=1)
    phi = pairs.mean(axis=0)
    if n_permutations > 1:
        std_error = pairs.std(axis=0, ddof=1) / np.sqrt(n_permutations)
    else:
        std_error = np.full(d, np.nan)
    return Attribution(phi, base, output, names, std_error, pass_values)


def background_sample(X_train: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Seeded subsample of training rows (all rows when fewer than `size`)."""
    if len(X_train) <= size:
        return np.asarray(X_train)
    rows = np.sort(np.random.default_rng(seed).choice(len(X_train), size=size, replace=False))
    return np.asarray(X_train)[rows]


def explain_samples(predict: PredictFn, X: np.ndarray, background: np.ndarray, feature_names: Sequence[str],
                    n_permutations: int = 10, seed: int = 0, n_jobs: int = 1) -> List[Attribution]:
    """Permutation attributions for every row of X on per-row seeds."""
    return Parallel(n_jobs=n_jobs)(
        delayed(permutation_shap)(predict, X[i], background, n_permutations, derive_seed(seed, i), feature_names)
        for i in range(len(X)))


@dataclass
class GlobalImportance:
    feature_names: List[str]
    mean_abs: np.ndarray
    std_abs: np.ndarray

    def ranking(self) -> List[str]:
        order = sorted(range(len(self.feature_names)), key=lambda j: (-self.mean_abs[j], self.feature_names[j]))
        return [self.feature_names[j] for j in order]

    def top_k(self, k: int) -> pd.DataFrame:
        frame = self.to_frame()
        return frame.set_index("feature").loc[self.ranking()[:k]].reset_index()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"feature": self.feature_names, "mean_abs_shap": self.mean_abs,
                             "std_abs_shap": self.std_abs})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "GlobalImportance":
        return cls(frame["feature"].tolist(), frame["mean_abs_shap"].to_numpy(dtype=np.float64),
                   frame["std_abs_shap"].to_numpy(dtype=np.float64))


def _check_schema(attributions: Sequence[Attribution]) -> List[str]:
    if not attributions:
        raise ExplainError("no attributions to aggregate")
    names = attributions[0].feature_names
    for a in attributions[1:]:
        if a.feature_names != names:
            raise ExplainError("attributions do not share one feature schema")
    return names


def aggregate_global(attributions: Sequence[Attribution]) -> GlobalImportance:
    """Mean and standard deviation of |phi| per feature across samples."""
    names = _check_schema(attributions)
    magnitudes = np.abs(np.array([a.values for a in attributions]))
    return GlobalImportance(list(names), magnitudes.mean(axis=0), magnitudes.std(axis=0))


def beeswarm_rows(attributions: Sequence[Attribution], X_raw: np.ndarray, sample_ids: Sequence[str]) -> pd.DataFrame:
    """Rows of (sample_id, feature, phi, value) for beeswarm rendering."""
    names = _check_schema(attributions)
    rows = []
    for sample, attribution, values in zip(sample_ids, attributions, np.asarray(X_raw)):
        for j, name in enumerate(names):
            rows.append({"sample_id": sample, "feature": name, "phi": attribution.values[j], "value": values[j]})
    return pd.DataFrame(rows, columns=["sample_id", "feature", "phi", "value"])


def beeswarm_arrays(rows: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Invert beeswarm_rows into (phi matrix, raw value matrix, feature names)."""
    samples = list(dict.fromkeys(rows["sample_id"]))
    names = list(dict.fromkeys(rows["feature"]))
    phi = rows.pivot(index="sample_id", columns="feature", values="phi").loc[samples, names]
    value = rows.pivot(index="sample_id", columns="feature", values="value").loc[samples, names]
    return phi.to_numpy(dtype=np.float64), value.to_numpy(dtype=np.float64), names


def render_beeswarm(values: np.ndarray, X_raw: np.ndarray, feature_names: Sequence[str], path: Union[str, Path],
                    max_display: int = 10, seed: int = 0) -> Path:
    """
    Per-sample attributions coloured by raw feature value, saved as SVG.

    shap orders the swarm with the global numpy RNG; it is seeded from
    `seed` and the feature names for the call and restored afterwards.
    """
    values = np.asarray(values, dtype=np.float64)
    explanation = shap.Explanation(values=values, base_values=np.zeros(len(values)),
                                   data=np.asarray(X_raw), feature_names=list(feature_names))
    previous = np.random.get_state()
    np.random.seed(derive_seed(seed, "beeswarm", *feature_names))
    try:
        shap.plots.beeswarm(explanation, max_display=max_display, show=False)
    finally:
        np.random.set_state(previous)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close("all")
    return path


def render_importance_bar(importance: GlobalImportance, path: Union[str, Path], top_k: int = 10,
                          title: str = "") -> Path:
    top = importance.top_k(top_k).iloc[::-1]
    fig, ax = plt.subplots(figsize=(6, 0.4 * len(top) + 1.2))
    ax.barh(top["feature"], top["mean_abs_shap"], xerr=top["std_abs_shap"], color="#4c72b0", capsize=3)
    ax.set_xlabel("mean |SHAP value|")
    ax.set_title(title)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return path


def model_specific_importance(model: ProbabilisticClassifier, X_train: np.ndarray) -> Optional[Dict[str, float]]:
    """
    Native importances: |coef| * feature std for LR, impurity importances for
    DT/RF, gain for XGB. None for families without one (MLP, ensemble).
    """
    native = model.importances()
    if native is None:
        return None
    if model.family == ModelFamily.LR:
        std = np.asarray(X_train, dtype=np.float64).std(axis=0)
        return {name: native[name] * float(s) for name, s in zip(model.feature_names, std)}
    return native
