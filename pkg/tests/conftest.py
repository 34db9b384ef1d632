import numpy as np
import pytest

from malscore.sde import make_schedule


@pytest.fixture(scope="session")
def ve():
    return make_schedule("ve", sigma_min=0.01, sigma_max=50.0, T=1.0)


@pytest.fixture(scope="session")
def vp():
    return make_schedule("vp", beta_min=0.1, T=1.0)


@pytest.fixture(scope="session")
def subvp():
    return make_schedule("subvp", beta_min=0.1, T=1.0)


@pytest.fixture(scope="session")
def all_schedules(ve, vp, subvp):
    return [ve, vp, subvp]
