import numpy as np
import pytest

from sparse_eit.mesh import generate_ball_mesh


@pytest.fixture(scope="session")
def disk():
    return generate_ball_mesh(2, 8)


@pytest.fixture(scope="session")
def disk_fine():
    return generate_ball_mesh(2, 22)


@pytest.fixture(scope="session")
def ball():
    return generate_ball_mesh(3, 4)


@pytest.fixture(scope="session")
def ball_medium():
    return generate_ball_mesh(3, 6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
