"""
Configuration loader for the benchmark pipeline.
Loads YAML (or JSON) files, validates them with pydantic and caches per path.
"""

import os
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator


_config_cache = {}
CONFIG_DEFAULT = "config/pipeline.yaml"

FULL_BUDGETS = {"selection_trials": 1000, "tpe_trials": 300, "seeds": 30}

STAGES = ["synth", "engineer", "select", "tune", "train",
          "evaluate", "calibrate", "explain", "report"]

M = TypeVar("M", bound=BaseModel)


class PathsConfig(BaseModel):
    cohort: str = "work/cohort.jsonl"
    work_dir: str = "work"
    imputation_config: str = "config/imputation.yaml"
    synth_config: str = "config/synth.yaml"


class BudgetsConfig(BaseModel):
    selection_trials: int = Field(200, ge=1)
    population: int = Field(50, ge=2)
    inner_trials: int = Field(10, ge=1)
    inner_folds: int = Field(3, ge=2)
    tpe_trials: int = Field(40, ge=1)
    tpe_folds: int = Field(5, ge=2)
    seeds: int = Field(10, ge=1)


class TPEConfig(BaseModel):
    gamma: float = Field(0.25, gt=0.0, lt=1.0)
    n_startup: int = Field(10, ge=1)
    n_candidates: int = Field(24, ge=1)


class ExplainConfig(BaseModel):
    background_size: int = Field(200, ge=1)
    n_permutations: int = Field(10, ge=1)
    top_k: int = Field(10, ge=1)
    max_samples: Optional[int] = Field(None, ge=1)


class CalibrationConfig(BaseModel):
    n_bins: int = Field(10, ge=1)


class MLPConfig(BaseModel):
    batch_size: int = Field(128, ge=1)
    max_epochs: int = Field(500, ge=1)
    patience: int = Field(20, ge=1)


class PipelineConfig(BaseModel):
    """Validated pipeline configuration."""

    paths: PathsConfig = PathsConfig()
    stages: Dict[str, bool] = Field(default_factory=lambda: {s: True for s in STAGES})
    budgets: BudgetsConfig = BudgetsConfig()
    penalty_lambda: float = Field(0.0005, ge=0.0)
    families: List[str] = Field(default_factory=lambda: ["dt", "lr", "rf", "xgb", "mlp", "ensemble"])
    master_seed: int = 0
    jobs: int = Field(1, ge=1)
    tpe: TPEConfig = TPEConfig()
    explain: ExplainConfig = ExplainConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    mlp: MLPConfig = MLPConfig()
    space_overrides: Dict[str, Dict[str, List[float]]] = Field(default_factory=dict)
    min_seed_success: float = Field(0.9, gt=0.0, le=1.0)

    @field_validator("families")
    @classmethod
    def _known_families(cls, value: List[str]) -> List[str]:
        known = {"dt", "lr", "rf", "xgb", "mlp", "ensemble"}
        unknown = [f for f in value if f not in known]
        if unknown:
            raise ValueError(f"unknown model families: {unknown}")
        return value

    @field_validator("stages")
    @classmethod
    def _known_stages(cls, value: Dict[str, bool]) -> Dict[str, bool]:
        unknown = [s for s in value if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stages: {unknown}")
        return {s: value.get(s, True) for s in STAGES}

    def with_full_budgets(self) -> "PipelineConfig":
        """Return a copy with the full-scale budgets restored."""
        budgets = self.budgets.model_copy(update=FULL_BUDGETS)
        return self.model_copy(update={"budgets": budgets})

    @property
    def work_dir(self) -> Path:
        return Path(self.paths.work_dir)


def read_config_file(path: str) -> Dict[str, Any]:
    """
    Read a YAML or JSON config file into a dictionary.

    Raises:
        ValueError: If the file is missing or not a mapping
    """
    if not os.path.exists(path):
        raise ValueError(f"Config not found: {path}")

    with open(path, "r") as f:
        if path.endswith(".json"):
            data = json.load(f)
        else:
            data = yaml.safe_load(f)

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{path} must contain a mapping at the top level")
    return data


def load_model_config(path: str, model: Type[M]) -> M:
    """
    Load and validate a config file against a pydantic model (cached per path).

    Args:
        path: Path to YAML/JSON file
        model: Pydantic model class

    Returns:
        Validated model instance

    Raises:
        ValueError: If the file is missing or invalid
    """
    key = (os.path.abspath(path), model.__name__)
    if key in _config_cache:
        return _config_cache[key]

    data = read_config_file(path)
    try:
        config = model.model_validate(data)
    except ValidationError as e:
        raise ValueError(f"Invalid config {path}: {e}") from e

    _config_cache[key] = config
    return config


def load_pipeline_config(config_path: Optional[str] = None,
                         seed: Optional[int] = None,
                         jobs: Optional[int] = None,
                         full_budgets: bool = False) -> PipelineConfig:
    """
    Load the pipeline configuration with env and CLI overrides applied.

    Precedence: explicit arguments > environment > file.

    Args:
        config_path: Path to config file (default: BENCH_CONFIG_PATH or config/pipeline.yaml)
        seed: Optional master seed override
        jobs: Optional worker count override
        full_budgets: Restore full-scale budgets

    Returns:
        PipelineConfig instance
    """
    config_path = config_path or os.getenv("BENCH_CONFIG_PATH", CONFIG_DEFAULT)
    config = load_model_config(config_path, PipelineConfig)

    updates: Dict[str, Any] = {}
    env_jobs = os.getenv("BENCH_JOBS")
    if env_jobs:
        updates["jobs"] = int(env_jobs)
    if jobs is not None:
        updates["jobs"] = jobs
    if seed is not None:
        updates["master_seed"] = seed
    if updates:
        config = config.model_copy(update=updates)
    if full_budgets:
        config = config.with_full_budgets()
    return config


def clear_cache():
    """Clear all cached config data."""
    _config_cache.clear()
