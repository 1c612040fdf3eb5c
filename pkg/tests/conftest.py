import numpy as np
import pytest

from cgolab.grid import GridSpec, ball_mask
from cgolab.media import make_exp_medium


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16, 2 * np.pi)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32, 2 * np.pi)


@pytest.fixture(scope="session")
def medium32():
    """Generic band-limited test medium; identities hold to ~1e-10 on it."""
    g = GridSpec(32, 2 * np.pi)
    return make_exp_medium(
        g,
        alpha_bumps=[(0.02 + 0.008j, 0.25, -0.1, 0.2, 1.0)],
        beta_bumps=[(0.015, -0.2, 0.2, 0.0, 0.9)],
        profile="gauss",
        band_limit_modes=3,
    )


@pytest.fixture(scope="session")
def mask_omega32():
    return ball_mask(GridSpec(32, 2 * np.pi), 1.45)
