"""Shared fixtures."""

import numpy as np
import pytest

from featureflow.config import CONFIG
from featureflow.iff import IffConfig, IffModule


@pytest.fixture(autouse=True)
def clean_config():
    """Discards config sections set by a test."""
    yield

    for section in CONFIG.sections():
        CONFIG.remove_section(section)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture
def unit_features(rng: np.random.Generator) -> np.ndarray:
    """8 x 12 x 12 features whose vectors all have unit norm."""
    features = rng.normal(size=(8, 12, 12))
    return features / np.sqrt((features**2).sum(axis=0))


@pytest.fixture(params=["basic", "advanced"])
def toy_module(request) -> IffModule:
    return IffModule.build(IffConfig.toy(request.param), seed=7)
