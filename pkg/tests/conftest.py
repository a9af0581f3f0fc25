"""Shared fixtures."""

import numpy as np
import pytest

from racetune.config import load_config
from racetune.harness import Environment
from racetune.vehicle import VehicleParams


@pytest.fixture(scope="session")
def config():
    return load_config()


@pytest.fixture(scope="session")
def nominal(config) -> VehicleParams:
    return config.vehicle


@pytest.fixture(scope="session")
def env(config) -> Environment:
    return Environment.from_config(config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def cornering_state():
    """A moderately aggressive cornering state used by several tests."""
    return np.array([0.3, -0.2, 0.4, 1.8, 0.12, 2.5])
