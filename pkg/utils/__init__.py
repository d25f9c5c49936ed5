"""
Infrastructure utilities for the donor discard benchmark.
"""

from .logging import setup_logging, get_logger, reset_logging
from .config import (
    PipelineConfig,
    load_pipeline_config,
    load_model_config,
    read_config_file,
    clear_cache,
)
from .seeding import derive_seed, rng_for

__all__ = [
    # Logging
    "setup_logging",
    "get_logger",
    "reset_logging",

    # Configuration
    "PipelineConfig",
    "load_pipeline_config",
    "load_model_config",
    "read_config_file",
    "clear_cache",

    # Seeding
    "derive_seed",
    "rng_for",
]

__version__ = "1.0.0"
