"""Tests for donor labelling, splitting, standardization and matrix persistence."""
import numpy as np
import pytest

from tools.dataset_tools import (
    DISCARDED,
    TRANSPLANTED,
    DonorRecord,
    FeatureMatrix,
    LabeledCohort,
    apply_scaler,
    derive_label,
    fit_scaler,
    load_cohort,
    save_cohort,
    split_cohort,
)
from utils.errors import LabelingError, ScalingError, SplitError


def _record(donor_id, outcomes=(TRANSPLANTED, TRANSPLANTED), **static):
    return DonorRecord(donor_id, static_vars=static, kidney_outcomes=outcomes)


def _cohort(n, discard_every=4):
    records = [_record(f"D{i:03d}", (DISCARDED, DISCARDED) if i % discard_every == 0 else (TRANSPLANTED, None))
               for i in range(n)]
    return LabeledCohort.from_records(records)


@pytest.mark.parametrize("outcomes, expected", [
    ((TRANSPLANTED, TRANSPLANTED), TRANSPLANTED),
    ((TRANSPLANTED, DISCARDED), TRANSPLANTED),
    ((DISCARDED, DISCARDED), DISCARDED),
    ((None, TRANSPLANTED), TRANSPLANTED),
    ((DISCARDED, None), DISCARDED),
])
def test_derive_label(outcomes, expected):
    assert derive_label(_record("a", outcomes)) == expected


def test_derive_label_both_unknown():
    with pytest.raises(LabelingError):
        derive_label(_record("a", (None, None)))


def test_unlabeled_donors_skipped_when_asked():
    records = [_record("a"), _record("b", (None, None))]
    with pytest.raises(LabelingError):
        LabeledCohort.from_records(records)
    cohort = LabeledCohort.from_records(records, skip_unlabeled=True)
    assert cohort.ids == ["a"]


def test_unsorted_series_rejected():
    with pytest.raises(ValueError):
        DonorRecord("a", timeseries={"creatinine": ((2.0, 1.0), (1.0, 2.0))})


def test_split_sizes():
    split = split_cohort(_cohort(100), seed=7)
    assert (len(split.train_ids), len(split.val_ids), len(split.test_ids)) == (72, 8, 20)


def test_split_large_cohort_test_size():
    split = split_cohort(_cohort(4080), seed=0)
    assert len(split.test_ids) == 816


def test_split_deterministic_and_disjoint():
    cohort = _cohort(100)
    first, second = split_cohort(cohort, seed=7), split_cohort(cohort, seed=7)
    assert first == second
    assert sorted(first.all_ids) == sorted(cohort.ids)
    assert not set(first.train_ids) & set(first.test_ids)
    assert split_cohort(cohort, seed=8).test_ids != first.test_ids


def test_split_too_small():
    with pytest.raises(SplitError):
        split_cohort(_cohort(9), seed=0)


def _matrix(values, names=None):
    values = np.asarray(values, dtype=float)
    n, d = values.shape
    names = names or [f"f{j}" for j in range(d)]
    return FeatureMatrix(values, names, np.zeros(n, dtype=int), [f"D{i}" for i in range(n)])


def test_scaler_closed_form():
    scaler = fit_scaler(_matrix([[1.0], [2.0], [3.0]]))
    scaled = apply_scaler(scaler, _matrix([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(scaled.values[:, 0], [-1.2247449, 0.0, 1.2247449], atol=1e-6)
    test_value = apply_scaler(scaler, _matrix([[4.0]])).values[0, 0]
    assert test_value == pytest.approx(2.4494897, abs=1e-6)


def test_scaler_constant_column_zero():
    scaler = fit_scaler(_matrix([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]))
    assert scaler.zero_variance.tolist() == [True, False]
    scaled = apply_scaler(scaler, _matrix([[5.0, 1.0], [7.0, 3.0]]))
    assert scaled.values[:, 0].tolist() == [0.0, 0.0]


def test_scaler_ignores_poisoned_held_out_rows():
    rng = np.random.default_rng(4)
    full = _matrix(rng.normal(size=(20, 3)))
    train_ids = full.donor_ids[:14]
    clean = fit_scaler(full.select_rows(train_ids))

    poisoned_values = full.values.copy()
    poisoned_values[14:17] = 1e12
    poisoned_values[17:] = np.nan
    poisoned = full.with_values(poisoned_values)
    again = fit_scaler(poisoned.select_rows(train_ids))
    np.testing.assert_array_equal(clean.mean, again.mean)
    np.testing.assert_array_equal(clean.std, again.std)
    scaled = apply_scaler(again, poisoned.select_rows(poisoned.donor_ids[14:17]))
    assert np.all(scaled.values > 1e9)


def test_scaler_rejects_missing():
    with pytest.raises(ScalingError):
        fit_scaler(_matrix([[1.0], [np.nan]]))
    scaler = fit_scaler(_matrix([[1.0], [2.0]]))
    with pytest.raises(ScalingError):
        apply_scaler(scaler, _matrix([[np.nan]]))


def test_matrix_csv_keeps_schema(tmp_path):
    matrix = FeatureMatrix(np.array([[0.5, 1.0], [np.nan, 0.0]]), ["age", "med__Heparin"], [1, 0],
                           ["D1", "D2"], {"age": "numeric", "med__Heparin": "medication"})
    csv_path, schema_path = matrix.to_csv(tmp_path / "train.csv")
    assert schema_path.name == "train.schema.json"
    loaded, extra = FeatureMatrix.from_csv(csv_path)
    assert loaded.feature_names == matrix.feature_names
    assert loaded.feature_types == matrix.feature_types
    assert loaded.donor_ids == ["D1", "D2"]
    assert loaded.labels.tolist() == [1, 0]
    np.testing.assert_array_equal(loaded.mask, matrix.mask)
    assert extra.empty


def test_cohort_file_skips_unlabeled(tmp_path):
    records = [_record("a", (DISCARDED, None), age=40), _record("b", (None, None), age=50),
               DonorRecord("c", timeseries={"urea": ((0.0, 5.0), (3.0, 6.5))}, kidney_outcomes=(TRANSPLANTED, None))]
    save_cohort(tmp_path / "cohort.jsonl", records)
    cohort = load_cohort(tmp_path / "cohort.jsonl")
    assert cohort.ids == ["a", "c"]
    assert cohort.counts() == {TRANSPLANTED: 1, DISCARDED: 1}
    assert cohort.records[1].timeseries["urea"] == ((0.0, 5.0), (3.0, 6.5))
    assert cohort.label_codes().tolist() == [0, 1]
