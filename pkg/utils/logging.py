"""
Logging for the benchmark stages.

One stdout handler (UTC timestamps), an optional log file, and quiet
defaults for the numerical libraries that report every trial or epoch.
Python warnings (sklearn convergence, torch deprecations) are routed
through the `py.warnings` logger.
"""

import os
import sys
import time
import logging
from typing import Optional


DEFAULT_FORMAT = "%(asctime)sZ %(levelname)-7s %(name)s | %(message)s"

# Log every trial/epoch/iteration at INFO
NOISY_LIBRARIES = ("optuna", "matplotlib", "shap", "numba", "PIL", "joblib", "xgboost")

_state = {"configured": False}


def setup_logging(level: Optional[str] = None,
                  format: Optional[str] = None,
                  log_file: Optional[str] = None,
                  quiet_libraries: bool = True):
    """
    Configure the root logger once per process.

    Args:
        level: DEBUG, INFO, WARNING or ERROR (default: $LOG_LEVEL or INFO)
        format: Record format (default: $LOG_FORMAT or DEFAULT_FORMAT)
        log_file: Also append records to this file (default: $LOG_FILE)
        quiet_libraries: Hold NOISY_LIBRARIES at WARNING
    """
    if _state["configured"]:
        return

    log_level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    formatter = logging.Formatter(format or os.getenv("LOG_FORMAT", DEFAULT_FORMAT))
    formatter.converter = time.gmtime

    handlers = [logging.StreamHandler(sys.stdout)]
    log_file = log_file or os.getenv("LOG_FILE")
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    root = logging.getLogger()
    root.setLevel(getattr(logging, log_level))
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    logging.captureWarnings(True)

    if quiet_libraries:
        for name in NOISY_LIBRARIES:
            logging.getLogger(name).setLevel(logging.WARNING)
        try:
            import optuna
            optuna.logging.set_verbosity(optuna.logging.WARNING)
        except ImportError:
            pass

    _state["configured"] = True


def get_logger(name: str) -> logging.Logger:
    """Module logger; configures logging on first use."""
    if not _state["configured"]:
        setup_logging()
    return logging.getLogger(name)


def reset_logging():
    """Drop root handlers so the next setup_logging call takes effect (e.g. after .env is loaded)."""
    root = logging.getLogger()
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()
    logging.captureWarnings(False)
    _state["configured"] = False
