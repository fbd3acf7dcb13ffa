import numpy as np
import pytest

from dppflow import problem


@pytest.fixture(scope="session")
def params2d():
    return problem.paper_2d_parameters()


@pytest.fixture(scope="session")
def params3d():
    return problem.paper_3d_parameters()


@pytest.fixture(scope="session")
def mms2d(params2d):
    return problem.mms_2d(params2d)


@pytest.fixture(scope="session")
def mms3d(params3d):
    return problem.mms_3d(params3d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
