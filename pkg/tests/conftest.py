import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wplap.grid import Grid, GridFunction
from wplap.rng import make_rng
from wplap.weights import WeightFamilySpec, build_field, random_field

settings.register_profile(
    "wplap", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("wplap")


def identity_field(grid, **params):
    return build_field(WeightFamilySpec("identity", params), grid)


def rough_function(grid, seed, scale=1.0):
    """Nodal white noise (zero boundary): exercises the non-smooth regime."""
    rng = make_rng(seed, 99)
    return GridFunction.from_callable(grid, lambda x: scale * rng.normal(size=len(x)))


def field_for(grid, seed, kind):
    if kind == "identity":
        return identity_field(grid)
    return random_field(grid, make_rng(seed, 98), isotropic=(kind == "isotropic"))


@pytest.fixture
def line():
    return Grid.box(33, 0.0, 1.0, 1)


@pytest.fixture
def square():
    return Grid.box(9, 0.0, 1.0, 2)
