import numpy as np
import pytest
from hypothesis import settings

from tensorload.load_model import REFERENCE_PARAMS, BusMeasurement
from tensorload.synth import TraceShape, generate_synthetic

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def truth():
    return REFERENCE_PARAMS


@pytest.fixture(scope="session")
def sag_trace():
    """0.95 pu sag for 0.5 s, generated at the reference parameter set."""
    return generate_synthetic(TraceShape(), REFERENCE_PARAMS)


@pytest.fixture(scope="session")
def short_sag_trace():
    return generate_synthetic(TraceShape(t_end=0.6), REFERENCE_PARAMS)


@pytest.fixture
def meas0():
    return BusMeasurement(0.0, 1.0, 0.0, 0.6, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
