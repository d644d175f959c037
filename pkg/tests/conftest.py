import numpy as np
import pytest

from flexmpc.model import FullState, PlantParams


@pytest.fixture
def canonical():
    return PlantParams.canonical()


@pytest.fixture
def deflected():
    """Canonical plant state with 0.1 rad motor-side deflection, at rest."""
    return FullState(q=[0.0], dq=[0.0], theta=[0.1], dtheta=[0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
