import numpy as np
import pytest

from quenchmesh.profiles import profile_constants, solve_w0, solve_w1bar


@pytest.fixture(scope="session")
def w0():
    return solve_w0()


@pytest.fixture(scope="session")
def w1bar(w0):
    return solve_w1bar(w0)


@pytest.fixture(scope="session")
def constants(w0, w1bar):
    return profile_constants(w0, w1bar)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260827)
