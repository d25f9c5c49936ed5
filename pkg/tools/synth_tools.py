"""
Synthetic donor cohorts with a known discard mechanism.

Latent donor traits are drawn first, the discard label follows a logistic
model on their z-scores with the intercept bisected to the target
prevalence, then raw fields, time series and medications are rendered and
missingness is injected per imputation strategy class.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.special import expit

from tools.dataset_tools import DISCARDED, TRANSPLANTED, DonorRecord, FeatureMatrix, LabeledCohort, save_cohort
from utils.artifacts import read_json, write_json
from utils.errors import SynthError
from utils.logging import get_logger
from utils.seeding import rng_for

logger = get_logger(__name__)

PREVALENCE_TOL = 0.005
DIGITS = 6

LATENTS = ("age", "creatinine_slope", "creatinine_level", "urea_level", "diabetes", "diuresis",
           "protein_urine", "hypertension")

# latent -> engineered feature that carries it
LATENT_FEATURES = {
    "age": "age",
    "creatinine_slope": "creatinine__slope",
    "creatinine_level": "creatinine__intercept",
    "urea_level": "urea__last",
    "diabetes": "diabetes",
    "diuresis": "dlh_norm",
    "protein_urine": "protein_urine__last",
    "hypertension": "hypertension",
}

ICD_CODES = {"I61": 0.30, "I63": 0.20, "S06": 0.20, "G93": 0.15, "I60": 0.138,
             "R99": 0.004, "C71": 0.004, "J96": 0.004}
BLOOD_GROUPS = {"A": 0.43, "0": 0.41, "B": 0.11, "AB": 0.05}
EKG_QRS = {"none": 0.60, "others": 0.15, "MI-like": 0.08, "RSB": 0.07, "LSB": 0.05, "bifascicular block": 0.05}
URINE_GLUCOSE = {"negative": 0.70, "trace": 0.15, "positive": 0.15}

MEDICATIONS = ("Noradrenalin 0.1 mg/kg/min", "Pantoprazol 40 mg", "Cefuroxim 1.5 g", "Desmopressin 4 ug",
               "Hydrocortison 100 mg", "Insulin 4 IE/h", "Propofol 200 mg/h", "Sufentanil 25 ug/h",
               "Furosemid 20 mg", "Kaliumchlorid 20 mmol", "Dobutamin 5 ug/kg/min", "Vasopressin 2 IE/h",
               "Levothyroxin 100 ug", "Methylprednisolon 250 mg", "Ampicillin 2 g", "Metronidazol 500 mg",
               "Enoxaparin 40 mg", "Paracetamol 1 g", "Midazolam 5 mg/h", "Omeprazol 20 mg")
HEPARIN = "Heparin 5000 IE"


class TimeSeriesSpec(BaseModel):
    """Generation settings of one time-series variable."""

    kind: str = Field("numeric", pattern="^(numeric|posneg)$")
    base: float = 0.0
    base_sd: float = Field(1.0, ge=0.0)
    slope_sd: float = Field(0.0, ge=0.0)
    noise_sd: float = Field(0.0, ge=0.0)
    horizon_hours: float = Field(72.0, gt=0.0)
    obs_counts: List[int] = Field(default_factory=lambda: [3, 4, 5, 6])
    obs_probs: List[float] = Field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])


def _default_timeseries() -> Dict[str, TimeSeriesSpec]:
    return {
        "creatinine": TimeSeriesSpec(base=90.0, base_sd=30.0, slope_sd=0.6, noise_sd=4.0,
                                     obs_counts=[2, 3, 4, 5, 6, 7], obs_probs=[0.1, 0.2, 0.2, 0.2, 0.2, 0.1]),
        "urea": TimeSeriesSpec(base=6.0, base_sd=2.0, noise_sd=0.5, obs_counts=[1, 2, 3], obs_probs=[0.4, 0.5, 0.1]),
        "sodium": TimeSeriesSpec(base=142.0, base_sd=4.0, noise_sd=1.5, obs_counts=[1, 2, 3],
                                 obs_probs=[0.45, 0.45, 0.1]),
        "protein_urine": TimeSeriesSpec(kind="posneg", obs_counts=[2, 3, 4], obs_probs=[0.4, 0.4, 0.2]),
        "albumin": TimeSeriesSpec(base=30.0, base_sd=5.0, noise_sd=1.0, obs_counts=[1, 2], obs_probs=[0.8, 0.2]),
    }


def _default_missing_vars() -> Dict[str, List[str]]:
    return {
        "logical_default": ["hypertension"],
        "missing_category": ["urine_glucose"],
        "config_rule": ["cpr_duration"],
        "normal_sample": ["phys_*"],
        "dichotomize": ["troponin"],
        "iterative": ["noise_*", "bw"],
    }


class SynthConfig(BaseModel):
    """Synthetic cohort definition."""

    n_donors: int = Field(2000, ge=10)
    seed: int = 0
    prevalence: float = Field(0.228, gt=0.0, lt=1.0)
    n_informative_features: int = Field(4, ge=0)
    n_noise_features: int = Field(10, ge=0)
    informative_weight: float = 0.4
    coefficients: Dict[str, float] = Field(default_factory=lambda: {
        "age": 0.8, "creatinine_slope": 1.0, "creatinine_level": 0.6, "urea_level": 0.4,
        "diabetes": 0.5, "diuresis": -0.5, "protein_urine": 0.3, "hypertension": 0.3})
    timeseries: Dict[str, TimeSeriesSpec] = Field(default_factory=_default_timeseries)
    missingness: Dict[str, float] = Field(default_factory=lambda: {
        "logical_default": 0.15, "missing_category": 0.20, "config_rule": 0.50, "normal_sample": 0.10,
        "dichotomize": 0.80, "iterative": 0.05})
    missing_vars: Dict[str, List[str]] = Field(default_factory=_default_missing_vars)
    heparin_rate: Dict[str, float] = Field(default_factory=lambda: {TRANSPLANTED: 0.70, DISCARDED: 0.35})
    medication_rate: float = Field(0.3, ge=0.0, le=1.0)
    unlabeled_fraction: float = Field(0.0, ge=0.0, lt=1.0)

    @field_validator("coefficients")
    @classmethod
    def _known_latents(cls, value: Dict[str, float]) -> Dict[str, float]:
        unknown = set(value) - set(LATENTS)
        if unknown:
            raise ValueError(f"unknown latent traits: {sorted(unknown)}")
        return value

    @field_validator("timeseries")
    @classmethod
    def _driven_series(cls, value: Dict[str, TimeSeriesSpec]) -> Dict[str, TimeSeriesSpec]:
        absent = {"creatinine", "urea", "protein_urine"} - set(value)
        if absent:
            raise ValueError(f"time series driving the label are missing: {sorted(absent)}")
        return value

    @field_validator("missingness")
    @classmethod
    def _rates(cls, value: Dict[str, float]) -> Dict[str, float]:
        bad = {k: v for k, v in value.items() if not 0.0 <= v < 1.0}
        if bad:
            raise ValueError(f"missingness rates must lie in [0, 1): {bad}")
        return value

    def weights(self) -> Dict[str, float]:
        """Coefficient per latent name including phys_* (informative) and noise_* (zero)."""
        w = {name: float(self.coefficients.get(name, 0.0)) for name in LATENTS}
        for k in range(self.n_informative_features):
            w[f"phys_{k:02d}"] = self.informative_weight * (1.0 if k % 2 == 0 else -1.0)
        for k in range(self.n_noise_features):
            w[f"noise_{k:02d}"] = 0.0
        return w


@dataclass
class GroundTruth:
    """Generating mechanism of a synthetic cohort; never read by pipeline stages."""

    coefficients: Dict[str, float]
    intercept: float
    prevalence_target: float
    prevalence_realized: float
    informative_features: List[str]
    missingness_realized: Dict[str, float] = field(default_factory=dict)
    latent_features: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"coefficients": self.coefficients, "intercept": self.intercept,
                "prevalence_target": self.prevalence_target, "prevalence_realized": self.prevalence_realized,
                "informative_features": self.informative_features,
                "missingness_realized": self.missingness_realized, "latent_features": self.latent_features}


def _choice(rng: np.random.Generator, table: Dict[str, float]) -> str:
    levels = list(table)
    probs = np.array(list(table.values()))
    return levels[int(rng.choice(len(levels), p=probs / probs.sum()))]


def _r(x: float) -> float:
    return round(float(x), DIGITS)


def _latents(rng: np.random.Generator, config: SynthConfig) -> Dict[str, float]:
    age = float(np.clip(rng.normal(55.0, 15.0), 18.0, 90.0))
    creat = config.timeseries["creatinine"]
    urea = config.timeseries["urea"]
    traits = {
        "age": age,
        "creatinine_slope": rng.normal(0.0, creat.slope_sd),
        "creatinine_level": max(rng.normal(creat.base, creat.base_sd), 20.0),
        "urea_level": max(rng.normal(urea.base, urea.base_sd), 0.5),
        "diabetes": float(rng.random() < 0.05 + 0.15 * (age - 18.0) / 72.0),
        "diuresis": max(rng.normal(1.5, 0.6), 0.05),
        "protein_urine": float(rng.random()),
        "hypertension": float(rng.random() < 0.25 + 0.25 * (age - 18.0) / 72.0),
    }
    for k in range(config.n_informative_features):
        traits[f"phys_{k:02d}"] = rng.normal(0.0, 1.0)
    for k in range(config.n_noise_features):
        traits[f"noise_{k:02d}"] = rng.normal(0.0, 1.0)
    return traits


def _series(rng: np.random.Generator, spec: TimeSeriesSpec, level: float, slope: float,
            p_pos: float) -> List[List[Any]]:
    n = int(rng.choice(spec.obs_counts, p=np.asarray(spec.obs_probs) / np.sum(spec.obs_probs)))
    times = np.sort(rng.uniform(0.0, spec.horizon_hours, size=n))
    times = times - times[0] if n else times
    points = []
    for t in times:
        if spec.kind == "posneg":
            points.append([_r(t), "pos" if rng.random() < p_pos else "neg"])
        else:
            points.append([_r(t), _r(level + slope * t + rng.normal(0.0, spec.noise_sd))])
    return points


def _render(rng: np.random.Generator, donor_id: str, traits: Dict[str, float],
            config: SynthConfig) -> Dict[str, Any]:
    age = traits["age"]
    bw = float(np.clip(rng.normal(78.0, 14.0), 40.0, 160.0))
    dt_hours = float(rng.choice([12.0, 24.0]))
    birth_day = -age * 365.25 - rng.uniform(0.0, 365.0)
    static: Dict[str, Any] = {
        "age": _r(age),
        "sex": "m" if rng.random() < 0.55 else "f",
        "bw": _r(bw),
        "dlh": _r(traits["diuresis"] * bw),
        "dt": _r(traits["diuresis"] * bw * dt_hours * rng.normal(1.0, 0.1)),
        "dt_hours": dt_hours,
        "blood_group": _choice(rng, BLOOD_GROUPS),
        "cause_of_death_icd": _choice(rng, ICD_CODES),
        "diabetes": "yes" if traits["diabetes"] else "no",
        "hypertension": "yes" if traits["hypertension"] else "no",
        "ekg_qrs": _choice(rng, EKG_QRS),
        "urine_glucose": _choice(rng, URINE_GLUCOSE),
        "troponin": _r(max(rng.normal(0.05, 0.03), 0.0)),
        "birth_day": _r(birth_day),
        "admission_day": 0.0,
        "death_day": _r(rng.uniform(1.0, 20.0)),
        "diabetes_diagnosis_day": None,
        "alcohol_start_day": None,
        "alcohol_end_day": None,
    }
    if traits["diabetes"]:
        static["diabetes_diagnosis_day"] = _r(birth_day + rng.uniform(20.0, age) * 365.25)
    if rng.random() < 0.3:
        start = birth_day + rng.uniform(16.0, 30.0) * 365.25
        static["alcohol_start_day"] = _r(start)
        if rng.random() < 0.5:
            static["alcohol_end_day"] = _r(rng.uniform(start, -1.0))
    if rng.random() < 0.25:
        minutes = int(rng.integers(2, 41))
        static["cpr_note"] = f"CPR {minutes} min"
        static["cpr_duration"] = float(minutes)
    else:
        static["cpr_note"] = "no CPR"
        static["cpr_duration"] = 0.0
    for name, value in traits.items():
        if name.startswith(("phys_", "noise_")):
            static[name] = _r(value)

    specs = config.timeseries
    timeseries = {}
    for name, spec in specs.items():
        if name == "creatinine":
            timeseries[name] = _series(rng, spec, traits["creatinine_level"], traits["creatinine_slope"], 0.0)
        elif name == "urea":
            timeseries[name] = _series(rng, spec, traits["urea_level"], 0.0, 0.0)
        elif name == "protein_urine":
            timeseries[name] = _series(rng, spec, 0.0, 0.0, traits["protein_urine"])
        else:
            timeseries[name] = _series(rng, spec, rng.normal(spec.base, spec.base_sd), 0.0, 0.0)

    medications = [m for m in MEDICATIONS if rng.random() < config.medication_rate * (1.0 - 0.03 * MEDICATIONS.index(m))]
    return {"donor_id": donor_id, "static": static, "timeseries": timeseries, "medications": medications}


def _solve_intercept(logits: np.ndarray, u: np.ndarray, target: float, tol: float) -> Tuple[float, float]:
    """Bisect b so that mean(u < sigmoid(logits + b)) is within tol of target."""
    low, high = -40.0, 40.0
    for _ in range(200):
        b = 0.5 * (low + high)
        rate = float(np.mean(u < expit(logits + b)))
        if abs(rate - target) <= tol:
            return b, rate
        if rate < target:
            low = b
        else:
            high = b
    raise SynthError(f"discard prevalence {target:.3f} unreachable within +/-{tol:.3%} "
                     f"(closest {rate:.4f})")


def _matches(name: str, pattern: str) -> bool:
    return name.startswith(pattern[:-1]) if pattern.endswith("*") else name == pattern


def _inject_missingness(rows: List[Dict[str, Any]], config: SynthConfig) -> Dict[str, float]:
    n = len(rows)
    realized = {}
    static_names = set(rows[0]["static"])
    for strategy, patterns in sorted(config.missing_vars.items()):
        rate = config.missingness.get(strategy, 0.0)
        targets = sorted(v for v in static_names | set(config.timeseries)
                         if any(_matches(v, p) for p in patterns))
        rates = []
        for var in targets:
            count = int(round(rate * n))
            chosen = rng_for(config.seed, "missing", var).choice(n, size=count, replace=False)
            for i in chosen:
                if var in rows[i]["static"]:
                    rows[i]["static"][var] = None
                else:
                    rows[i]["timeseries"][var] = []
            rates.append(count / n)
        if rates:
            realized[strategy] = float(np.mean(rates))
    return realized


def _outcomes(rng: np.random.Generator, discarded: bool) -> List[Optional[str]]:
    r = rng.random()
    if discarded:
        return [DISCARDED, DISCARDED] if r < 0.9 else [DISCARDED, None]
    if r < 0.6:
        return [TRANSPLANTED, TRANSPLANTED]
    return [TRANSPLANTED, DISCARDED] if r < 0.9 else [TRANSPLANTED, None]


def synthesize_records(config: SynthConfig) -> Tuple[List[DonorRecord], GroundTruth]:
    """
    Draw every donor record (unlabeled ones included) and the ground truth.

    Returns:
        (records in donor_id order, GroundTruth)

    Raises:
        SynthError: If the target prevalence cannot be reached
    """
    n = config.n_donors
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(n)]
    width = len(str(n - 1))
    ids = [f"D{i:0{width}d}" for i in range(n)]

    traits = [_latents(rng, config) for rng in streams]
    u = np.array([rng.random() for rng in streams])

    weights = config.weights()
    names = list(weights)
    Z = np.array([[t[name] for name in names] for t in traits])
    sd = Z.std(axis=0)
    Z = (Z - Z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    logits = Z @ np.array([weights[name] for name in names])

    tol = max(PREVALENCE_TOL, 1.0 / n)
    b, rate = _solve_intercept(logits, u, config.prevalence, tol)
    discarded = u < expit(logits + b)

    rows = [_render(rng, donor_id, t, config) for rng, donor_id, t in zip(streams, ids, traits)]
    for row, rng, is_discarded in zip(rows, streams, discarded):
        row["kidney_outcomes"] = _outcomes(rng, bool(is_discarded))
        label = DISCARDED if is_discarded else TRANSPLANTED
        # procedure-correlated, not causal
        if rng.random() < config.heparin_rate[label]:
            row["medications"].append(HEPARIN)
        if rng.random() < config.unlabeled_fraction:
            row["kidney_outcomes"] = [None, None]

    realized = _inject_missingness(rows, config)
    records = [DonorRecord.from_dict(row) for row in rows]

    informative = sorted(LATENT_FEATURES.get(k, k) for k, w in weights.items() if w != 0.0)
    truth = GroundTruth(dict(weights), float(b), config.prevalence, rate, informative,
                        realized, {k: LATENT_FEATURES.get(k, k) for k in weights})
    logger.info(f"Synthesized {n} donors: discard rate {rate:.4f} (target {config.prevalence}), "
                f"{len(informative)} informative traits")
    return records, truth


def generate_cohort(config: SynthConfig) -> Tuple[LabeledCohort, GroundTruth]:
    """
    Generate a labelled synthetic cohort and its ground truth. Donors drawn
    as unlabeled are left out of the cohort.

    Raises:
        SynthError: If the target prevalence cannot be reached
    """
    records, truth = synthesize_records(config)
    return LabeledCohort.from_records(records, skip_unlabeled=True), truth


def ground_truth_path(cohort_path: Union[str, Path]) -> Path:
    cohort_path = Path(cohort_path)
    return cohort_path.with_name(cohort_path.stem + ".ground_truth.json")


def write_synthetic(config: SynthConfig, cohort_path: Union[str, Path]) -> Tuple[Path, Path]:
    """Write the cohort JSON-lines file and its ground truth to a separate JSON file."""
    records, truth = synthesize_records(config)
    cohort_file = save_cohort(cohort_path, records)
    truth_file = write_json(ground_truth_path(cohort_path), truth.to_dict())
    return cohort_file, truth_file


def load_ground_truth(path: Union[str, Path]) -> GroundTruth:
    data = read_json(path)
    return GroundTruth(**data)


def planted_matrix(n: int = 600, n_informative: int = 10, n_noise: int = 30, seed: int = 0,
                   signal: float = 1.0) -> Tuple[FeatureMatrix, List[int]]:
    """
    Standardized matrix whose labels depend on the first `n_informative`
    columns only.

    Returns:
        (FeatureMatrix, informative column indices)
    """
    rng = rng_for(seed, "planted")
    d = n_informative + n_noise
    X = rng.normal(size=(n, d))
    w = np.zeros(d)
    w[:n_informative] = signal * np.where(np.arange(n_informative) % 2 == 0, 1.0, -1.0)
    y = (rng.random(n) < expit(X @ w)).astype(np.int64)
    names = [f"inf_{j:02d}" for j in range(n_informative)] + [f"noise_{j:02d}" for j in range(n_noise)]
    ids = [f"P{i:05d}" for i in range(n)]
    return FeatureMatrix(X, names, y, ids), list(range(n_informative))
