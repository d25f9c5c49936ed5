"""Tests for one-way ANOVA and Tukey HSD."""
import math

import numpy as np
import pytest
from scipy import stats

from tools.stats_tools import TukeyTable, anova_oneway, tukey_hsd
from utils.errors import StatsError


def test_identical_groups():
    result = anova_oneway({"a": [0.6, 0.7, 0.8], "b": [0.6, 0.7, 0.8]})
    assert result.f_statistic == 0.0
    assert result.p_value == pytest.approx(1.0)
    table = tukey_hsd({"a": [0.6, 0.7, 0.8], "b": [0.6, 0.7, 0.8]})
    assert table.pairs[0].p_adj == pytest.approx(1.0)


def test_zero_variance_separation():
    result = anova_oneway({"a": [0.0, 0.0, 0.0], "b": [1.0, 1.0, 1.0]})
    assert math.isinf(result.f_statistic)
    assert result.p_value == 0.0
    assert anova_oneway({"a": [1.0, 1.0], "b": [1.0, 1.0]}).p_value == 1.0


def test_hand_computed_sums_of_squares():
    result = anova_oneway({"a": [1.0, 2.0, 3.0], "b": [4.0, 5.0, 6.0], "c": [7.0, 8.0, 9.0]})
    assert result.ss_between == pytest.approx(54.0)
    assert result.ss_within == pytest.approx(6.0)
    assert (result.df_between, result.df_within) == (2, 6)
    assert result.f_statistic == pytest.approx(27.0)
    assert result.p_value == pytest.approx(stats.f.sf(27.0, 2, 6))


def test_anova_matches_reference_on_random_groups():
    rng = np.random.default_rng(0)
    groups = {f"g{i}": rng.normal(0.1 * i, 1.0, size=int(rng.integers(3, 12))) for i in range(4)}
    ours = anova_oneway(groups)
    reference = stats.f_oneway(*groups.values())
    assert ours.f_statistic == pytest.approx(reference.statistic, rel=1e-10)
    assert ours.p_value == pytest.approx(reference.pvalue, rel=1e-8)


def test_tukey_matches_reference():
    rng = np.random.default_rng(1)
    groups = {name: rng.normal(mu, 0.05, size=10) for name, mu in (("dt", 0.6), ("lr", 0.65), ("rf", 0.66))}
    table = tukey_hsd(groups)
    reference = stats.tukey_hsd(*groups.values())
    names = list(groups)
    for pair in table.pairs:
        i, j = names.index(pair.group_a), names.index(pair.group_b)
        assert pair.p_adj == pytest.approx(reference.pvalue[i, j], abs=1e-6)
        assert pair.mean_diff == pytest.approx(groups[pair.group_b].mean() - groups[pair.group_a].mean())


def test_outlier_group_significant():
    base = np.array([0.60, 0.62, 0.58, 0.61, 0.59, 0.63, 0.57, 0.60])
    table = tukey_hsd({"a": base, "b": base + 0.005, "c": base + 0.3})
    assert table.lookup("a", "c").significant
    assert table.lookup("b", "c").significant
    assert not table.lookup("a", "b").significant
    assert table.lookup("c", "a").mean_diff == pytest.approx(-0.3)


def test_p_monotone_in_mean_difference():
    base = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
    p_values = [tukey_hsd({"a": base, "b": base + d, "c": base - 1.0}).lookup("a", "b").p_adj
                for d in (0.0, 0.02, 0.05, 0.1, 0.2)]
    assert all(later <= earlier for earlier, later in zip(p_values, p_values[1:]))


def test_shift_invariance():
    rng = np.random.default_rng(2)
    groups = {name: rng.normal(size=6) for name in ("a", "b", "c")}
    shifted = {name: values + 7.5 for name, values in groups.items()}
    assert anova_oneway(shifted).f_statistic == pytest.approx(anova_oneway(groups).f_statistic, rel=1e-9)
    for original, moved in zip(tukey_hsd(groups).pairs, tukey_hsd(shifted).pairs):
        assert moved.q == pytest.approx(original.q, rel=1e-9)
        assert moved.p_adj == pytest.approx(original.p_adj, rel=1e-6)


def test_p_matrix_lower_triangle_and_serialization():
    table = tukey_hsd({"a": [1.0, 2.0], "b": [2.0, 3.0], "c": [5.0, 6.0]})
    matrix = table.p_matrix()
    assert matrix.shape == (3, 3)
    assert np.isnan(matrix[0, 1]) and np.isnan(matrix[1, 1])
    assert not np.isnan(matrix[2, 0])
    restored = TukeyTable.from_dict(table.to_dict())
    assert restored.pairs == table.pairs
    assert list(table.to_frame().columns) == ["group_a", "group_b", "mean_diff", "q", "p_adj", "significant"]


@pytest.mark.parametrize("groups", [{"a": [1.0, 2.0]}, {"a": [1.0], "b": [1.0, 2.0]}, {"a": [1.0, np.nan], "b": [1.0, 2.0]}])
def test_invalid_groups(groups):
    with pytest.raises(StatsError):
        anova_oneway(groups)
    with pytest.raises(StatsError):
        tukey_hsd(groups)
