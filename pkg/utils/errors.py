"""
Error types raised by the benchmark.

Every error is a ValueError so callers that only know the generic
convention keep working.
"""

from typing import Any, Optional


class BenchError(ValueError):
    """Base class for all benchmark errors."""


class LabelingError(BenchError):
    """A donor-level label cannot be derived."""


class SplitError(BenchError):
    """A cohort cannot be partitioned."""


class ScalingError(BenchError):
    """Standardization was asked to handle incomplete data."""


class ClassificationError(BenchError):
    """A raw variable cannot be assigned a time-series kind."""


class ImputationPlanError(BenchError):
    """An incomplete feature has no imputation strategy."""


class ModelConfigError(BenchError):
    """Invalid hyperparameters or missing inputs for a model family."""


class SearchConfigError(BenchError):
    """Invalid feature-selection or tuning configuration."""


class CrossValidationError(BenchError):
    """Folds cannot be built with both classes present."""


class MetricError(BenchError):
    """A metric is undefined for the given input."""


class StatsError(BenchError):
    """A statistical test precondition does not hold."""


class RetrainError(BenchError):
    """Too few seeded retraining runs succeeded."""


class ExplainError(BenchError):
    """An attribution request cannot be served."""


class SynthError(BenchError):
    """A synthetic cohort cannot be generated from the given config."""


class CalibrationError(BenchError):
    """A calibrator failed to fit."""

    def __init__(self, message: str, last_iterate: Optional[Any] = None):
        super().__init__(message)
        self.last_iterate = last_iterate


class StageError(BenchError):
    """A pipeline stage was started without its upstream artifacts."""

    def __init__(self, message: str, required_stage: Optional[str] = None):
        super().__init__(message)
        self.required_stage = required_stage
