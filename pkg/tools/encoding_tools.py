"""
Encoders for donor medications and categorical fields, and the domain
transforms (diuresis normalization, unit conversion, diabetes/alcohol
derived features, dichotomized groupings).
"""
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from sklearn.preprocessing import OneHotEncoder

from tools.dataset_tools import DonorRecord
from tools.timeseries_tools import posneg_code
from utils.logging import get_logger

logger = get_logger(__name__)

MISSING_LEVEL = "__missing__"
DAYS_PER_YEAR = 365.25


def medication_token(raw: str) -> Optional[str]:
    """First whitespace-delimited word of a medication entry."""
    parts = raw.strip().split()
    return parts[0] if parts else None


@dataclass
class MedicationVocabulary:
    """Top-k medication tokens by number of training donors taking them."""

    tokens: List[str]

    @property
    def feature_names(self) -> List[str]:
        return [f"med__{t}" for t in self.tokens]

    def encode(self, record: DonorRecord) -> Dict[str, float]:
        present = {medication_token(m) for m in record.medications}
        return {f"med__{t}": float(t in present) for t in self.tokens}


def fit_medication_vocabulary(train_records: Iterable[DonorRecord], top_k: int = 40) -> MedicationVocabulary:
    """
    Build the medication vocabulary from training donors.

    Each donor contributes a token at most once; ties in frequency are broken
    lexicographically.
    """
    counts: Counter = Counter()
    for record in train_records:
        tokens = {medication_token(m) for m in record.medications}
        tokens.discard(None)
        counts.update(tokens)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    tokens = [token for token, _ in ranked[:top_k]]
    logger.info(f"Medication vocabulary: {len(tokens)} of {len(counts)} tokens kept")
    return MedicationVocabulary(tokens)


def encode_medications(train_records: Sequence[DonorRecord], records: Iterable[DonorRecord],
                       top_k: int = 40) -> List[Dict[str, float]]:
    """Encode donors against the vocabulary fitted on the training donors."""
    vocabulary = fit_medication_vocabulary(train_records, top_k)
    return [vocabulary.encode(r) for r in records]


def _is_missing(value) -> bool:
    return value is None or (isinstance(value, float) and np.isnan(value))


@dataclass
class BinaryEncoder:
    """Plain 0/1 encoding of a two-level categorical variable."""

    variable: str
    positive_level: Optional[str]

    @property
    def feature_names(self) -> List[str]:
        return [self.variable]

    def encode(self, value) -> Dict[str, float]:
        if _is_missing(value):
            return {self.variable: np.nan}
        code = posneg_code(value)
        if code is None:
            code = float(str(value) == self.positive_level)
        return {self.variable: code}


@dataclass
class OneHotVocabulary:
    """Indicator encoding with a train-built vocabulary."""

    variable: str
    levels: List[str]
    rare_to_missing: List[str] = field(default_factory=list)
    missing_as_category: bool = False
    _encoder: Optional[OneHotEncoder] = field(default=None, repr=False)

    def __post_init__(self):
        if self._encoder is None and self.levels:
            self._encoder = OneHotEncoder(categories=[list(self.levels)], handle_unknown="ignore",
                                          sparse_output=False, dtype=np.float64)
            self._encoder.fit(np.array(self.levels, dtype=object).reshape(-1, 1))

    @property
    def feature_names(self) -> List[str]:
        names = [f"{self.variable}=={level}" for level in self.levels]
        if self.missing_as_category:
            names.append(f"{self.variable}=={MISSING_LEVEL}")
        return names

    def encode_many(self, values: Sequence) -> np.ndarray:
        values = [None if _is_missing(v) or str(v) in self.rare_to_missing else str(v) for v in values]
        missing = np.array([v is None for v in values])
        if self._encoder is not None:
            column = np.array([MISSING_LEVEL if v is None else v for v in values], dtype=object).reshape(-1, 1)
            block = self._encoder.transform(column)
        else:
            block = np.zeros((len(values), 0))
        if self.missing_as_category:
            block = np.column_stack([block, missing.astype(np.float64)])
        else:
            block[missing] = np.nan
        return block


def one_hot_encode(variable: str, train_values: Sequence, is_icd: bool = False,
                   rare_threshold: float = 0.01, missing_as_category: bool = False):
    """
    Fit the categorical encoding of one variable on its training values.

    Variables with more than two levels get one indicator per retained level;
    for ICD-coded variables, levels seen in fewer than `rare_threshold` of the
    training donors become missing first. Two-level variables are routed to
    plain 0/1 encoding.

    Returns:
        OneHotVocabulary or BinaryEncoder
    """
    present = [str(v) for v in train_values if not _is_missing(v)]
    counts = Counter(present)
    levels = sorted(counts)

    if len(levels) <= 2 and not missing_as_category:
        positive = levels[-1] if levels else None
        logger.debug(f"'{variable}' has {len(levels)} levels, using 0/1 encoding")
        return BinaryEncoder(variable, positive)

    rare: List[str] = []
    if is_icd and train_values:
        n = len(train_values)
        rare = [level for level in levels if counts[level] / n < rare_threshold]
        levels = [level for level in levels if level not in rare]
        if rare:
            logger.info(f"'{variable}': {len(rare)} rare ICD codes mapped to missing")
    return OneHotVocabulary(variable, levels, rare, missing_as_category)


class DomainConfig(BaseModel):
    """Raw field names consumed by the domain transforms."""

    body_weight: str = "bw"
    diuresis_last_hour: str = "dlh"
    diuresis_total: str = "dt"
    diuresis_window_hours: str = "dt_hours"
    birth_day: str = "birth_day"
    death_day: str = "death_day"
    admission_day: str = "admission_day"
    diabetes_diagnosis_day: str = "diabetes_diagnosis_day"
    alcohol_start_day: str = "alcohol_start_day"
    alcohol_end_day: str = "alcohol_end_day"
    unit_conversions: Dict[str, float] = Field(default_factory=dict)
    dichotomize: Dict[str, Dict[str, List[str]]] = Field(default_factory=dict)

    def consumed_fields(self) -> List[str]:
        return [self.diuresis_last_hour, self.diuresis_total, self.diuresis_window_hours,
                self.birth_day, self.death_day, self.admission_day, self.diabetes_diagnosis_day,
                self.alcohol_start_day, self.alcohol_end_day] + list(self.dichotomize)


@dataclass
class DomainParams:
    """Train-fitted parameters of the domain transforms."""

    config: DomainConfig
    alcohol_edges: List[float]

    DERIVED = ("dlh_norm", "d24_norm", "age_at_diabetes_diagnosis", "diabetes_duration",
               "alcohol_duration_days", "last_alcohol_category")

    @property
    def feature_names(self) -> List[str]:
        names = list(self.DERIVED)
        names += [f"{name}__converted" for name in sorted(self.config.unit_conversions)]
        names += [f"{name}__yes" for name in sorted(self.config.dichotomize)]
        return names


def _num(static: Mapping, key: str) -> float:
    value = static.get(key)
    if value is None or isinstance(value, str):
        return np.nan
    return float(value)


def _days_since_last_alcohol(static: Mapping, cfg: DomainConfig) -> float:
    return _num(static, cfg.admission_day) - _num(static, cfg.alcohol_end_day)


def fit_domain_params(train_records: Iterable[DonorRecord], config: Optional[DomainConfig] = None) -> DomainParams:
    """Fit the last-alcohol category bins as quartiles over training donors who stopped drinking."""
    config = config or DomainConfig()
    gaps = []
    for record in train_records:
        s = record.static_vars
        if not np.isnan(_num(s, config.alcohol_start_day)) and not np.isnan(_num(s, config.alcohol_end_day)):
            gap = _days_since_last_alcohol(s, config)
            if not np.isnan(gap):
                gaps.append(gap)
    edges = list(np.quantile(gaps, [0.25, 0.5, 0.75])) if gaps else []
    return DomainParams(config, [float(e) for e in edges])


def last_alcohol_category(static: Mapping, params: DomainParams) -> float:
    """0 = none documented, 5 = still consuming, 4..1 = stopped recently..long ago."""
    cfg = params.config
    start = _num(static, cfg.alcohol_start_day)
    end = _num(static, cfg.alcohol_end_day)
    if np.isnan(start):
        return 0.0
    if np.isnan(end):
        return 5.0
    gap = _days_since_last_alcohol(static, cfg)
    if np.isnan(gap) or not params.alcohol_edges:
        return np.nan
    quartile = int(np.searchsorted(params.alcohol_edges, gap, side="left"))
    return float(4 - quartile)


def apply_domain_transforms(record: DonorRecord, params: DomainParams) -> Dict[str, float]:
    """
    Compute the derived domain features of one donor.

    Feature sets whose inputs are invalid (body weight or window <= 0) are
    missing for that donor.
    """
    cfg = params.config
    s = record.static_vars
    out: Dict[str, float] = {}

    bw = _num(s, cfg.body_weight)
    valid_bw = not np.isnan(bw) and bw > 0
    window = _num(s, cfg.diuresis_window_hours)
    out["dlh_norm"] = _num(s, cfg.diuresis_last_hour) / bw if valid_bw else np.nan
    if valid_bw and not np.isnan(window) and window > 0:
        out["d24_norm"] = _num(s, cfg.diuresis_total) / window * 24.0 / bw
    else:
        out["d24_norm"] = np.nan

    diagnosis = _num(s, cfg.diabetes_diagnosis_day)
    out["age_at_diabetes_diagnosis"] = (diagnosis - _num(s, cfg.birth_day)) / DAYS_PER_YEAR
    out["diabetes_duration"] = (_num(s, cfg.death_day) - diagnosis) / DAYS_PER_YEAR

    start = _num(s, cfg.alcohol_start_day)
    end = _num(s, cfg.alcohol_end_day)
    if np.isnan(end):
        end = _num(s, cfg.admission_day)
    out["alcohol_duration_days"] = end - start
    out["last_alcohol_category"] = last_alcohol_category(s, params)

    for name in sorted(cfg.unit_conversions):
        out[f"{name}__converted"] = _num(s, name) * cfg.unit_conversions[name]

    for name in sorted(cfg.dichotomize):
        groups = cfg.dichotomize[name]
        value = s.get(name)
        if value in groups.get("positive", []):
            out[f"{name}__yes"] = 1.0
        elif value in groups.get("negative", []):
            out[f"{name}__yes"] = 0.0
        else:
            out[f"{name}__yes"] = np.nan
    return out
