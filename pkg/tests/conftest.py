import numpy as np
import pytest

from conekahler.checks import reference_surface
from conekahler.cone_surface import SurfaceSpec
from conekahler.ke_continuity import KEProblem, ke_solve, prepare


@pytest.fixture(scope="session")
def ref128():
    return reference_surface(0.5, 128)


@pytest.fixture(scope="session")
def ref256():
    return reference_surface(0.5, 256)


def _ke(N):
    prob = KEProblem(SurfaceSpec(N, 0.5))
    setup = prepare(prob)
    return ke_solve(prob, setup=setup)


@pytest.fixture(scope="session")
def ke128():
    return _ke(128)


@pytest.fixture(scope="session")
def ke256():
    return _ke(256)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
