"""
Donor cohort ingestion, donor-level labelling, donor-keyed splits and
train-only standardization.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler as _SkStandardScaler

from utils.artifacts import read_jsonl, write_csv, write_json, write_jsonl
from utils.errors import LabelingError, ScalingError, SplitError
from utils.logging import get_logger

logger = get_logger(__name__)

TRANSPLANTED = "transplanted"
DISCARDED = "discarded"
OUTCOMES = (TRANSPLANTED, DISCARDED)

# Positive class is "transplanted"
LABEL_CODES = {TRANSPLANTED: 1, DISCARDED: 0}

TEST_FRACTION = 0.20
VAL_FRACTION = 0.10
MIN_COHORT = 10

Value = Union[float, str, None]


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class DonorRecord:
    """One donor: static fields, named time-series, medications and kidney outcomes."""

    donor_id: str
    static_vars: Mapping[str, Value] = field(default_factory=dict)
    timeseries: Mapping[str, Tuple[Tuple[float, Value], ...]] = field(default_factory=dict)
    medications: Tuple[str, ...] = ()
    kidney_outcomes: Tuple[Optional[str], Optional[str]] = (None, None)

    def __post_init__(self):
        for name, series in self.timeseries.items():
            times = [t for t, _ in series]
            if any(b < a for a, b in zip(times, times[1:])):
                raise ValueError(f"Donor {self.donor_id}: time-series '{name}' is not sorted by t")
        for outcome in self.kidney_outcomes:
            if outcome is not None and outcome not in OUTCOMES:
                raise ValueError(f"Donor {self.donor_id}: unknown kidney outcome '{outcome}'")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DonorRecord":
        outcomes = tuple(data.get("kidney_outcomes", [None, None]))
        if len(outcomes) != 2:
            raise ValueError(f"Donor {data.get('donor_id')}: kidney_outcomes must have two entries")
        return cls(
            donor_id=str(data["donor_id"]),
            static_vars=dict(data.get("static", {})),
            timeseries={
                name: tuple((float(t), v) for t, v in points)
                for name, points in data.get("timeseries", {}).items()
            },
            medications=tuple(data.get("medications", [])),
            kidney_outcomes=outcomes,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "donor_id": self.donor_id,
            "static": dict(self.static_vars),
            "timeseries": {name: [[t, v] for t, v in series] for name, series in self.timeseries.items()},
            "medications": list(self.medications),
            "kidney_outcomes": list(self.kidney_outcomes),
        }


def derive_label(record: DonorRecord) -> str:
    """
    Derive the donor-level label.

    A donor is "transplanted" when at least one kidney was transplanted and
    "discarded" otherwise. An unknown outcome counts as no evidence of
    transplantation.

    Raises:
        LabelingError: If both kidney outcomes are unknown
    """
    outcomes = record.kidney_outcomes
    if all(o is None for o in outcomes):
        raise LabelingError(f"Donor {record.donor_id}: both kidney outcomes unknown")
    if any(o == TRANSPLANTED for o in outcomes):
        return TRANSPLANTED
    return DISCARDED


@dataclass
class LabeledCohort:
    """Donor records with their derived donor-level labels."""

    records: List[DonorRecord]
    label: Dict[str, str]

    def __post_init__(self):
        ids = [r.donor_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("donor_id must be unique within a cohort")
        missing = [i for i in ids if i not in self.label]
        if missing:
            raise LabelingError(f"{len(missing)} donors have no label, e.g. {missing[0]}")

    @classmethod
    def from_records(cls, records: Iterable[DonorRecord], skip_unlabeled: bool = False) -> "LabeledCohort":
        kept, labels, skipped = [], {}, 0
        for record in records:
            try:
                labels[record.donor_id] = derive_label(record)
            except LabelingError:
                if not skip_unlabeled:
                    raise
                skipped += 1
                continue
            kept.append(record)
        if skipped:
            logger.warning(f"Skipped {skipped} donors with no known kidney outcome")
        return cls(records=kept, label=labels)

    @property
    def ids(self) -> List[str]:
        return [r.donor_id for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, ids: Iterable[str]) -> "LabeledCohort":
        wanted = set(ids)
        records = [r for r in self.records if r.donor_id in wanted]
        return LabeledCohort(records=records, label={r.donor_id: self.label[r.donor_id] for r in records})

    def label_codes(self, ids: Optional[Sequence[str]] = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.array([LABEL_CODES[self.label[i]] for i in ids], dtype=np.int64)

    def counts(self) -> Dict[str, int]:
        values = list(self.label.values())
        return {outcome: values.count(outcome) for outcome in OUTCOMES}


def load_cohort(path: Union[str, Path], skip_unlabeled: bool = True) -> LabeledCohort:
    """Load a JSON-lines cohort file (one donor record per line)."""
    records = [DonorRecord.from_dict(row) for row in read_jsonl(path)]
    cohort = LabeledCohort.from_records(records, skip_unlabeled=skip_unlabeled)
    logger.info(f"Loaded {len(cohort)} donors from {path} ({cohort.counts()})")
    return cohort


def save_cohort(path: Union[str, Path], records: Iterable[DonorRecord]) -> Path:
    return write_jsonl(path, (r.to_dict() for r in records))


@dataclass(frozen=True)
class SplitIndex:
    """Disjoint donor-id sets for training, validation and test."""

    train_ids: Tuple[str, ...]
    val_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]
    seed: int

    def __post_init__(self):
        train, val, test = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if train & val or train & test or val & test:
            raise SplitError("split sets must be pairwise disjoint")

    @property
    def all_ids(self) -> List[str]:
        return list(self.train_ids) + list(self.val_ids) + list(self.test_ids)

    def to_dict(self) -> Dict[str, Any]:
        return {"train_ids": list(self.train_ids), "val_ids": list(self.val_ids),
                "test_ids": list(self.test_ids), "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SplitIndex":
        return cls(tuple(data["train_ids"]), tuple(data["val_ids"]), tuple(data["test_ids"]), int(data["seed"]))


def split_cohort(cohort: LabeledCohort, seed: int) -> SplitIndex:
    """
    Partition donor ids into train / validation / test.

    20% of donors go to test uniformly at random; 10% of the remaining pool is
    carved as validation, stratified by label when both classes allow it.

    Args:
        cohort: Labelled cohort
        seed: Split seed

    Returns:
        SplitIndex

    Raises:
        SplitError: If the cohort has fewer than 10 donors
    """
    n = len(cohort)
    if n < MIN_COHORT:
        raise SplitError(f"cohort has {n} donors, at least {MIN_COHORT} required")

    ids = sorted(cohort.ids)
    n_test = round_half_away(TEST_FRACTION * n)
    pool, test = train_test_split(ids, test_size=n_test, random_state=seed, shuffle=True)

    n_val = round_half_away(VAL_FRACTION * len(pool))
    pool = sorted(pool)
    labels = cohort.label_codes(pool)
    stratify = labels if np.bincount(labels, minlength=2).min() >= 2 else None
    try:
        train, val = train_test_split(pool, test_size=n_val, random_state=seed, shuffle=True, stratify=stratify)
    except ValueError:
        # too few members per class for the requested validation size
        train, val = train_test_split(pool, test_size=n_val, random_state=seed, shuffle=True)

    split = SplitIndex(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), seed)
    logger.info(f"Split {n} donors: train={len(train)} val={len(val)} test={len(test)} (seed={seed})")
    return split


@dataclass
class FeatureMatrix:
    """Engineered numeric matrix; NaN marks a missing cell."""

    values: np.ndarray
    feature_names: List[str]
    labels: np.ndarray
    donor_ids: List[str]
    feature_types: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D array")
        n, d = self.values.shape
        if len(self.feature_names) != d or len(self.donor_ids) != n or len(self.labels) != n:
            raise ValueError(f"inconsistent FeatureMatrix shapes: values={self.values.shape}, "
                             f"names={len(self.feature_names)}, ids={len(self.donor_ids)}, labels={len(self.labels)}")
        for name in self.feature_names:
            self.feature_types.setdefault(name, "numeric")

    @property
    def mask(self) -> np.ndarray:
        """Boolean missingness mask."""
        return np.isnan(self.values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def n_missing(self) -> int:
        return int(self.mask.sum())

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def select_rows(self, ids: Sequence[str]) -> "FeatureMatrix":
        position = {d: i for i, d in enumerate(self.donor_ids)}
        rows = [position[i] for i in ids]
        return FeatureMatrix(self.values[rows], list(self.feature_names), self.labels[rows],
                             [self.donor_ids[i] for i in rows], dict(self.feature_types))

    def select_columns(self, names: Sequence[str]) -> "FeatureMatrix":
        position = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in position]
        if missing:
            raise KeyError(f"features not in matrix: {missing[:5]}")
        cols = [position[n] for n in names]
        return FeatureMatrix(self.values[:, cols], list(names), self.labels.copy(), list(self.donor_ids),
                             {n: self.feature_types[n] for n in names})

    def with_values(self, values: np.ndarray, feature_names: Optional[List[str]] = None,
                    feature_types: Optional[Dict[str, str]] = None) -> "FeatureMatrix":
        names = list(self.feature_names) if feature_names is None else feature_names
        types = feature_types if feature_types is not None else {n: self.feature_types.get(n, "numeric") for n in names}
        return FeatureMatrix(values, names, self.labels.copy(), list(self.donor_ids), types)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.feature_names)
        frame.insert(0, "label", self.labels)
        frame.insert(0, "donor_id", self.donor_ids)
        return frame

    def to_csv(self, path: Union[str, Path], extra: Optional[Dict[str, Sequence[Any]]] = None) -> Tuple[Path, Path]:
        """Write the matrix as CSV plus a sidecar schema JSON of feature names/types."""
        frame = self.to_frame()
        for name, column in (extra or {}).items():
            frame.insert(1, name, list(column))
        path = Path(path)
        write_csv(path, frame)
        schema_path = path.with_suffix(".schema.json")
        write_json(schema_path, {"features": [{"name": n, "type": self.feature_types[n]} for n in self.feature_names],
                                 "positive_label": TRANSPLANTED})
        return path, schema_path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> Tuple["FeatureMatrix", pd.DataFrame]:
        """Load a matrix written by to_csv; returns the matrix and any extra columns."""
        path = Path(path)
        schema = json.loads(path.with_suffix(".schema.json").read_text())
        names = [f["name"] for f in schema["features"]]
        types = {f["name"]: f["type"] for f in schema["features"]}
        frame = pd.read_csv(path, dtype={"donor_id": str})
        extra = frame.drop(columns=names + ["donor_id", "label"])
        matrix = cls(frame[names].to_numpy(dtype=np.float64), names, frame["label"].to_numpy(),
                     frame["donor_id"].tolist(), types)
        return matrix, extra


@dataclass
class StandardScaler:
    """Train-fitted z-score parameters with zero-variance flags (population std)."""

    feature_names: List[str]
    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        scale = np.where(self.zero_variance, 1.0, self.std)
        out = (values - self.mean) / scale
        out[:, self.zero_variance] = 0.0
        return out


def _require_complete(matrix: FeatureMatrix, action: str):
    missing = matrix.n_missing()
    if missing:
        raise ScalingError(f"cannot {action}: matrix has {missing} missing values (impute first)")


def fit_scaler(matrix: FeatureMatrix) -> StandardScaler:
    """
    Fit z-score parameters on a training matrix.

    Raises:
        ScalingError: If the matrix contains missing values
    """
    _require_complete(matrix, "fit scaler")
    sk = _SkStandardScaler(with_mean=True, with_std=True).fit(matrix.values)
    std = np.sqrt(sk.var_)
    constant = np.ptp(matrix.values, axis=0) == 0.0
    return StandardScaler(list(matrix.feature_names), sk.mean_.copy(), std, constant | (std == 0.0))


def apply_scaler(scaler: StandardScaler, matrix: FeatureMatrix) -> FeatureMatrix:
    """
    Standardize a matrix with train-fitted parameters.

    Raises:
        ScalingError: If the matrix is incomplete or its features differ from the scaler's
    """
    _require_complete(matrix, "apply scaler")
    if list(matrix.feature_names) != scaler.feature_names:
        raise ScalingError("matrix features do not match the fitted scaler")
    return matrix.with_values(scaler.transform(matrix.values))
