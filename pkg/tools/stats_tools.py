"""
One-way ANOVA and Tukey HSD over per-model metric samples.
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from utils.errors import StatsError
from utils.logging import get_logger

logger = get_logger(__name__)

ALPHA = 0.05


@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    p_value: float
    df_between: int
    df_within: int
    ss_between: float
    ss_within: float

    def to_dict(self) -> Dict[str, float]:
        return {"F": self.f_statistic, "p": self.p_value, "df_between": self.df_between,
                "df_within": self.df_within, "ss_between": self.ss_between, "ss_within": self.ss_within}


def _check_groups(groups: Mapping[str, Sequence[float]]) -> Dict[str, np.ndarray]:
    if len(groups) < 2:
        raise StatsError(f"need at least 2 groups, got {len(groups)}")
    arrays = {}
    for name, values in groups.items():
        arr = np.asarray(values, dtype=np.float64)
        if arr.size < 2:
            raise StatsError(f"group '{name}' has {arr.size} samples, at least 2 required")
        if np.any(~np.isfinite(arr)):
            raise StatsError(f"group '{name}' contains non-finite values")
        arrays[name] = arr
    return arrays


def _sums_of_squares(arrays: Dict[str, np.ndarray]):
    means = np.array([a.mean() for a in arrays.values()])
    sizes = np.array([a.size for a in arrays.values()])
    grand = np.concatenate(list(arrays.values())).mean()
    ss_between = 0.0 if np.ptp(means) == 0 else float(np.sum(sizes * (means - grand) ** 2))
    ss_within = float(sum(np.sum((a - a.mean()) ** 2) for a in arrays.values()))
    return means, sizes, ss_between, ss_within


def anova_oneway(groups: Mapping[str, Sequence[float]]) -> AnovaResult:
    """
    Classic one-way ANOVA.

    With zero within-group variance: equal means give F=0, p=1; any
    difference gives F=inf, p=0.

    Args:
        groups: Samples per model

    Returns:
        AnovaResult

    Raises:
        StatsError: With fewer than 2 groups or a group of fewer than 2 samples
    """
    arrays = _check_groups(groups)
    _, sizes, ss_between, ss_within = _sums_of_squares(arrays)
    k, n = len(arrays), int(sizes.sum())
    df_between, df_within = k - 1, n - k

    if ss_within == 0.0:
        if ss_between == 0.0:
            f_stat, p = 0.0, 1.0
        else:
            f_stat, p = float("inf"), 0.0
    else:
        f_stat = (ss_between / df_between) / (ss_within / df_within)
        p = float(stats.f.sf(f_stat, df_between, df_within))
    return AnovaResult(float(f_stat), float(np.clip(p, 0.0, 1.0)), df_between, df_within, ss_between, ss_within)


@dataclass(frozen=True)
class TukeyPair:
    group_a: str
    group_b: str
    mean_diff: float  # mean_b - mean_a
    q: float
    p_adj: float
    significant: bool

    def to_dict(self) -> Dict[str, object]:
        return {"group_a": self.group_a, "group_b": self.group_b, "mean_diff": self.mean_diff,
                "q": self.q, "p_adj": self.p_adj, "significant": self.significant}


@dataclass
class TukeyTable:
    groups: List[str]
    pairs: List[TukeyPair] = field(default_factory=list)
    alpha: float = ALPHA

    def lookup(self, a: str, b: str) -> TukeyPair:
        for pair in self.pairs:
            if (pair.group_a, pair.group_b) == (a, b):
                return pair
            if (pair.group_a, pair.group_b) == (b, a):
                return TukeyPair(a, b, -pair.mean_diff, pair.q, pair.p_adj, pair.significant)
        raise KeyError(f"no pair ({a}, {b})")

    def p_matrix(self) -> np.ndarray:
        """Lower-triangle matrix of adjusted p-values (NaN on and above the diagonal)."""
        k = len(self.groups)
        matrix = np.full((k, k), np.nan)
        for i in range(k):
            for j in range(i):
                matrix[i, j] = self.lookup(self.groups[i], self.groups[j]).p_adj
        return matrix

    def to_dict(self) -> Dict[str, object]:
        return {"groups": self.groups, "alpha": self.alpha, "pairs": [p.to_dict() for p in self.pairs]}

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "TukeyTable":
        return cls(list(data["groups"]), [TukeyPair(**p) for p in data["pairs"]], float(data["alpha"]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([p.to_dict() for p in self.pairs],
                            columns=["group_a", "group_b", "mean_diff", "q", "p_adj", "significant"])


def tukey_hsd(groups: Mapping[str, Sequence[float]], alpha: float = ALPHA) -> TukeyTable:
    """
    Tukey's HSD for all group pairs.

    q = |mean_i - mean_j| / sqrt(MS_within / 2 * (1/n_i + 1/n_j)); adjusted p
    from the studentized range distribution with k groups and N - k degrees
    of freedom.

    Raises:
        StatsError: As anova_oneway
    """
    arrays = _check_groups(groups)
    names = list(arrays)
    means, sizes, _, ss_within = _sums_of_squares(arrays)
    k, n = len(names), int(sizes.sum())
    df_within = n - k
    ms_within = ss_within / df_within

    table = TukeyTable(names, alpha=alpha)
    for i, j in combinations(range(k), 2):
        diff = float(means[j] - means[i])
        if ms_within == 0.0:
            q, p = (0.0, 1.0) if diff == 0.0 else (float("inf"), 0.0)
        else:
            se = np.sqrt(ms_within / 2.0 * (1.0 / sizes[i] + 1.0 / sizes[j]))
            q = abs(diff) / se
            p = float(np.clip(stats.studentized_range.sf(q, k, df_within), 0.0, 1.0))
        table.pairs.append(TukeyPair(names[i], names[j], diff, float(q), p, p < alpha))
    logger.debug(f"Tukey HSD: {sum(p.significant for p in table.pairs)} of {len(table.pairs)} pairs significant")
    return table
