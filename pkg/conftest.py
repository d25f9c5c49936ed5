"""
Shared pytest fixtures: a small synthetic cohort, its engineered splits,
a planted-signal matrix and a scratch work directory.
"""
import os
import sys
from pathlib import Path

import pytest

# Make sure local imports resolve
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from tools.dataset_tools import split_cohort  # noqa: E402
from tools.feature_tools import EngineeringConfig, engineer_splits  # noqa: E402
from tools.synth_tools import SynthConfig, generate_cohort, planted_matrix  # noqa: E402
from utils.config import clear_cache, load_model_config  # noqa: E402

REPO = Path(__file__).resolve().parent
IMPUTATION_CONFIG = REPO / "config" / "imputation.yaml"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: needs minutes; deselect with -m 'not slow'")


@pytest.fixture(autouse=True)
def _fresh_config_cache():
    clear_cache()
    yield
    clear_cache()


@pytest.fixture(scope="session")
def small_synth_config() -> SynthConfig:
    return SynthConfig(n_donors=150, seed=3)


@pytest.fixture(scope="session")
def small_cohort(small_synth_config):
    cohort, _ = generate_cohort(small_synth_config)
    return cohort


@pytest.fixture(scope="session")
def engineering_config() -> EngineeringConfig:
    return load_model_config(str(IMPUTATION_CONFIG), EngineeringConfig)


@pytest.fixture(scope="session")
def engineered(small_cohort, engineering_config):
    split = split_cohort(small_cohort, seed=0)
    return engineer_splits(small_cohort, split, engineering_config, seed=0)


@pytest.fixture(scope="session")
def planted():
    """(FeatureMatrix, informative indices) with 4 signal and 6 noise columns."""
    return planted_matrix(n=300, n_informative=4, n_noise=6, seed=11, signal=1.5)


@pytest.fixture
def work_dir(tmp_path) -> Path:
    path = tmp_path / "work"
    path.mkdir()
    return path
