"""Shared fixtures for the test suite."""

import dataclasses

import numpy as np
import pytest

from fuzzyloc.simulator import default_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_scenario():
    """Default benchmark shortened to 8 seconds for fast structural tests."""
    return dataclasses.replace(default_scenario(), duration=8.0)
