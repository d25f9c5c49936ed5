"""
Feature assembly: turns raw donor records into the engineered matrix and
runs the train-fitted imputation, redundancy filter and standardization
over the three splits.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import Field

from tools.dataset_tools import (
    DonorRecord,
    FeatureMatrix,
    LabeledCohort,
    SplitIndex,
    StandardScaler,
    apply_scaler,
    fit_scaler,
)
from tools.encoding_tools import (
    BinaryEncoder,
    DomainConfig,
    DomainParams,
    MedicationVocabulary,
    OneHotVocabulary,
    apply_domain_transforms,
    fit_domain_params,
    fit_medication_vocabulary,
    one_hot_encode,
)
from tools.imputation_tools import (
    ImputationPlan,
    StrategyConfig,
    apply_config_rules,
    drop_redundant_constant,
    fit_imputation_plan,
    impute,
)
from tools.timeseries_tools import (
    DEFAULT_UNIT_CONVERSIONS,
    TimeSeriesKind,
    classify_variables,
    convert_units,
    extract_timeseries_features,
    feature_names_for,
    summarize_kinds,
)
from utils.logging import get_logger

logger = get_logger(__name__)


class EngineeringConfig(StrategyConfig):
    """Imputation strategies plus the encoding and domain-transform settings."""

    categorical_missing: List[str] = Field(default_factory=list)
    icd_variables: List[str] = Field(default_factory=lambda: ["cause_of_death_icd"])
    rare_threshold: float = Field(0.01, ge=0.0, lt=1.0)
    medication_top_k: int = Field(40, ge=1)
    timeseries_first_or_last: Dict[str, str] = Field(default_factory=dict)
    unit_conversions: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_UNIT_CONVERSIONS))
    exclude_static: List[str] = Field(default_factory=list)
    domain: DomainConfig = DomainConfig()


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not (isinstance(value, float) and np.isnan(value))


@dataclass
class FeatureEngineer:
    """Train-fitted schema of the engineered matrix."""

    config: EngineeringConfig
    kinds: Dict[str, TimeSeriesKind] = field(default_factory=dict)
    numeric_static: List[str] = field(default_factory=list)
    categorical: Dict[str, Any] = field(default_factory=dict)
    medications: Optional[MedicationVocabulary] = None
    domain: Optional[DomainParams] = None
    rule_targets: Dict[str, Any] = field(default_factory=dict)

    def fit(self, train_records: Sequence[DonorRecord]) -> "FeatureEngineer":
        cfg = self.config
        self.rule_targets = {e.pattern: e for e in cfg.strategies if e.strategy == "config_rule" and e.source}
        self.kinds = classify_variables(train_records)
        self.medications = fit_medication_vocabulary(train_records, cfg.medication_top_k)
        self.domain = fit_domain_params(train_records, cfg.domain)

        skip = set(cfg.exclude_static) | set(cfg.domain.consumed_fields())
        skip |= {e.source for e in self.rule_targets.values()}
        values: Dict[str, List[Any]] = {}
        for record in train_records:
            static = self._static(record)
            for name in static:
                if name not in skip:
                    values.setdefault(name, [])
        for name in values:
            values[name] = [self._static(r).get(name) for r in train_records]

        self.numeric_static, self.categorical = [], {}
        for name in sorted(values):
            observed = [v for v in values[name] if v is not None]
            if observed and all(_is_number(v) or isinstance(v, bool) for v in observed):
                self.numeric_static.append(name)
            else:
                self.categorical[name] = one_hot_encode(
                    name, values[name], is_icd=name in cfg.icd_variables,
                    rare_threshold=cfg.rare_threshold, missing_as_category=name in cfg.categorical_missing)
        logger.info(f"Schema: {len(self.numeric_static)} numeric static, {len(self.categorical)} categorical, "
                    f"time series {summarize_kinds(self.kinds)}")
        return self

    def _static(self, record: DonorRecord) -> Dict[str, Any]:
        static = dict(record.static_vars)
        for target, entry in self.rule_targets.items():
            static[target] = apply_config_rules(static, target, entry)
        return static

    @property
    def feature_types(self) -> Dict[str, str]:
        types: Dict[str, str] = {n: "numeric" for n in self.numeric_static}
        for encoder in self.categorical.values():
            kind = "binary" if isinstance(encoder, BinaryEncoder) else "indicator"
            types.update({n: kind for n in encoder.feature_names})
        types.update({n: "domain" for n in self.domain.feature_names})
        for name in sorted(self.kinds):
            types.update({n: "timeseries" for n in feature_names_for(name, self.kinds[name])})
        types.update({n: "medication" for n in self.medications.feature_names})
        return types

    @property
    def feature_names(self) -> List[str]:
        return list(self.feature_types)

    def _row(self, record: DonorRecord) -> Dict[str, float]:
        static = self._static(record)
        row: Dict[str, float] = {}
        for name in self.numeric_static:
            value = static.get(name)
            row[name] = float(value) if _is_number(value) or isinstance(value, bool) else np.nan
        row.update(apply_domain_transforms(record, self.domain))
        for name in sorted(self.kinds):
            series = record.timeseries.get(name, ())
            if name in self.config.unit_conversions:
                series = convert_units(series, self.config.unit_conversions[name])
            reduce = self.config.timeseries_first_or_last.get(name, "last")
            row.update(extract_timeseries_features(series, self.kinds[name], name, reduce))
        row.update(self.medications.encode(record))
        return row

    def transform(self, records: Sequence[DonorRecord], labels: np.ndarray, n_jobs: int = 1) -> FeatureMatrix:
        """Engineered matrix with NaN for missing cells; schema fixed by fit."""
        names = self.feature_names
        position = {n: j for j, n in enumerate(names)}
        rows = Parallel(n_jobs=n_jobs)(delayed(self._row)(r) for r in records)
        values = np.full((len(records), len(names)), np.nan)
        for i, row in enumerate(rows):
            for name, value in row.items():
                values[i, position[name]] = value

        for var, encoder in self.categorical.items():
            column = [self._static(r).get(var) for r in records]
            if isinstance(encoder, OneHotVocabulary):
                block = encoder.encode_many(column)
                cols = [position[n] for n in encoder.feature_names]
                if cols:
                    values[:, cols] = block
            else:
                values[:, position[var]] = [encoder.encode(v)[var] for v in column]
        return FeatureMatrix(values, names, labels, [r.donor_id for r in records], self.feature_types)


@dataclass
class EngineeredSplits:
    """Imputed, filtered and standardized matrices of the three splits."""

    train: FeatureMatrix
    val: FeatureMatrix
    test: FeatureMatrix
    dropped: List[str]
    plan: ImputationPlan
    scaler: StandardScaler
    engineer: FeatureEngineer

    def split(self, name: str) -> FeatureMatrix:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def engineer_splits(cohort: LabeledCohort, split: SplitIndex, config: EngineeringConfig,
                    seed: int = 0, n_jobs: int = 1) -> EngineeredSplits:
    """
    Fit every engineering step on the training split and apply it to all three.

    Returns:
        EngineeredSplits with complete, standardized matrices
    """
    def records(ids):
        sub = cohort.subset(ids)
        return sub.records, sub.label_codes()

    train_records, train_labels = records(split.train_ids)
    engineer = FeatureEngineer(config).fit(train_records)

    raw: Dict[str, FeatureMatrix] = {"train": engineer.transform(train_records, train_labels, n_jobs)}
    for name, ids in (("val", split.val_ids), ("test", split.test_ids)):
        recs, labels = records(ids)
        raw[name] = engineer.transform(recs, labels, n_jobs)

    missing_share = raw["train"].n_missing() / max(raw["train"].values.size, 1)
    logger.info(f"Engineered {raw['train'].shape[1]} features; {missing_share:.1%} of train cells missing")

    plan = fit_imputation_plan(raw["train"], config, seed)
    imputed = {name: impute(plan, m) for name, m in raw.items()}
    train, dropped = drop_redundant_constant(imputed["train"])
    kept = train.feature_names
    scaler = fit_scaler(train)
    out = {name: apply_scaler(scaler, m.select_columns(kept)) for name, m in imputed.items()}
    logger.info(f"Final feature space: {len(kept)} features ({len(dropped)} dropped as redundant)")
    return EngineeredSplits(out["train"], out["val"], out["test"], dropped, plan, scaler, engineer)
