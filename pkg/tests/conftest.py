import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochrb.fields import Grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow,
                                                 HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def grid():
    return Grid(32, 17, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
