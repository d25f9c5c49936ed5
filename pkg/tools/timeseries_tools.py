"""
Time-series summarization: variable kind classification, per-donor linear
trend fits and the fixed feature set extracted per kind.
"""
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from tools.dataset_tools import DonorRecord
from utils.errors import ClassificationError
from utils.logging import get_logger

logger = get_logger(__name__)

POSITIVE_TOKENS = frozenset({"pos", "positive", "+", "yes", "ja"})
NEGATIVE_TOKENS = frozenset({"neg", "negative", "-", "no", "nein"})

SINGLE_VALUE_SHARE = 0.5
DENSE_MEAN_OBS = 2.0

# umol/L -> mg/dL; applied to raw series values before extraction
CREATININE_UMOL_TO_MG_DL = 0.011312
DEFAULT_UNIT_CONVERSIONS = {"creatinine": CREATININE_UMOL_TO_MG_DL}


class TimeSeriesKind(str, Enum):
    TYPE1 = "type1"            # categorical positive/negative
    TYPE2 = "type2"            # numeric, sparse
    TYPE3 = "type3"            # numeric, dense
    NOT_TIMESERIES = "not_timeseries"


FEATURES_BY_KIND = {
    TimeSeriesKind.TYPE1: ("first", "last", "count", "span_hours"),
    TimeSeriesKind.TYPE2: ("first", "last", "count", "span_hours", "std", "min", "max"),
    TimeSeriesKind.TYPE3: ("first", "last", "count", "span_hours", "std", "min", "max", "intercept", "slope"),
}


def posneg_code(value) -> Optional[float]:
    """Map a positive/negative token to 1/0; None when not such a token."""
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        token = value.strip().lower()
        if token in POSITIVE_TOKENS:
            return 1.0
        if token in NEGATIVE_TOKENS:
            return 0.0
    return None


def _is_numeric(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def classify_variables(records: Iterable[DonorRecord]) -> Dict[str, TimeSeriesKind]:
    """
    Classify every time-series variable seen in the (training) records.

    NotTimeSeries when more than half of the donors with any observation have
    exactly one; otherwise Type1 for positive/negative categorical values,
    Type2/Type3 for numeric values by mean observations per donor (< 2 / >= 2).

    Args:
        records: Training donors

    Returns:
        Mapping variable name -> TimeSeriesKind

    Raises:
        ClassificationError: On mixed numeric/categorical values or
            categorical values that are not positive/negative outcomes
    """
    records = list(records)
    if not records:
        raise ClassificationError("cannot classify variables of an empty cohort")

    counts: Dict[str, List[int]] = defaultdict(list)
    numeric: Dict[str, bool] = {}
    categorical: Dict[str, bool] = {}
    posneg: Dict[str, bool] = {}

    for record in records:
        for name, series in record.timeseries.items():
            observed = [v for _, v in series if v is not None]
            if not observed:
                continue
            counts[name].append(len(observed))
            for value in observed:
                if _is_numeric(value):
                    numeric[name] = True
                else:
                    categorical[name] = True
                    posneg[name] = posneg.get(name, True) and posneg_code(value) is not None

    kinds = {}
    for name in sorted(counts):
        if numeric.get(name) and categorical.get(name):
            raise ClassificationError(f"variable '{name}' mixes numeric and categorical values")
        per_donor = np.asarray(counts[name])
        if np.mean(per_donor == 1) > SINGLE_VALUE_SHARE:
            kinds[name] = TimeSeriesKind.NOT_TIMESERIES
        elif categorical.get(name):
            if not posneg.get(name):
                raise ClassificationError(f"variable '{name}' has categorical values other than positive/negative")
            kinds[name] = TimeSeriesKind.TYPE1
        elif per_donor.mean() < DENSE_MEAN_OBS:
            kinds[name] = TimeSeriesKind.TYPE2
        else:
            kinds[name] = TimeSeriesKind.TYPE3

    summary = defaultdict(int)
    for kind in kinds.values():
        summary[kind.value] += 1
    logger.info(f"Classified {len(kinds)} time-series variables: {dict(summary)}")
    return kinds


@dataclass(frozen=True)
class TrendFit:
    """Least-squares line y = intercept + slope * t (t in hours since first entry)."""

    intercept: float
    slope: float
    n_points: int
    valid: bool


def fit_trend(t: Sequence[float], y: Sequence[float]) -> TrendFit:
    """
    Fit the per-donor linear trend.

    Simultaneous duplicate time stamps are averaged before fitting. The fit
    is valid only with at least two distinct time points.

    Args:
        t: Observation times in hours
        y: Numeric values

    Returns:
        TrendFit
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(t)
    if n == 0:
        return TrendFit(np.nan, np.nan, 0, False)

    times, inverse = np.unique(t, return_inverse=True)
    if len(times) < 2:
        return TrendFit(np.nan, np.nan, n, False)
    means = np.bincount(inverse, weights=y) / np.bincount(inverse)

    hours = times - times[0]
    design = np.column_stack([np.ones_like(hours), hours])
    (intercept, slope), *_ = np.linalg.lstsq(design, means, rcond=None)
    return TrendFit(float(intercept), float(slope), n, True)


def feature_names_for(variable: str, kind: TimeSeriesKind) -> List[str]:
    if kind == TimeSeriesKind.NOT_TIMESERIES:
        return [variable]
    return [f"{variable}__{suffix}" for suffix in FEATURES_BY_KIND[kind]]


def extract_timeseries_features(series: Sequence[Tuple[float, object]], kind: TimeSeriesKind,
                                variable: str = "ts", reduce: str = "last") -> Dict[str, float]:
    """
    Summarize one donor's series into the feature set of its kind.

    All kinds yield first, last, count and span_hours; numeric kinds add
    std, min and max; Type3 adds the trend intercept and slope. Undefined
    values (e.g. std of a single point) and every feature of an empty
    series are NaN. NotTimeSeries variables reduce to the first or last value.

    Args:
        series: (t, value) pairs sorted by t
        kind: Variable kind
        variable: Feature name prefix
        reduce: "first" or "last" for NotTimeSeries variables

    Returns:
        Ordered mapping feature name -> value
    """
    points = [(t, v) for t, v in series if v is not None]
    names = feature_names_for(variable, kind)
    if not points:
        return {name: np.nan for name in names}

    if kind == TimeSeriesKind.TYPE1:
        values = np.array([posneg_code(v) for _, v in points], dtype=np.float64)
    elif kind == TimeSeriesKind.NOT_TIMESERIES:
        chosen = points[0][1] if reduce == "first" else points[-1][1]
        code = chosen if _is_numeric(chosen) else posneg_code(chosen)
        return {variable: np.nan if code is None else float(code)}
    else:
        values = np.array([v for _, v in points], dtype=np.float64)
    times = np.array([t for t, _ in points], dtype=np.float64)

    out = {
        f"{variable}__first": values[0],
        f"{variable}__last": values[-1],
        f"{variable}__count": float(len(values)),
        f"{variable}__span_hours": times[-1] - times[0],
    }
    if kind in (TimeSeriesKind.TYPE2, TimeSeriesKind.TYPE3):
        out[f"{variable}__std"] = float(np.std(values, ddof=1)) if len(values) > 1 else np.nan
        out[f"{variable}__min"] = float(values.min())
        out[f"{variable}__max"] = float(values.max())
    if kind == TimeSeriesKind.TYPE3:
        trend = fit_trend(times, values)
        out[f"{variable}__intercept"] = trend.intercept if trend.valid else np.nan
        out[f"{variable}__slope"] = trend.slope if trend.valid else np.nan
    return out


def convert_units(series: Sequence[Tuple[float, object]], factor: float) -> Tuple[Tuple[float, object], ...]:
    """Multiply the numeric values of a series by a unit factor."""
    return tuple((t, v * factor if _is_numeric(v) else v) for t, v in series)


def summarize_kinds(kinds: Mapping[str, TimeSeriesKind]) -> Dict[str, List[str]]:
    grouped: Dict[str, List[str]] = defaultdict(list)
    for name, kind in sorted(kinds.items()):
        grouped[kind.value].append(name)
    return dict(grouped)
