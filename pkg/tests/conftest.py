import numpy as np
import pytest

from anisovortex.grid import build_grid
from anisovortex.profile import solve_profile


@pytest.fixture(scope="session")
def profile():
    """Default working profile: R = 40, 1024 geometric nodes."""
    return solve_profile(build_grid(1e-3, 40.0, 1024))


@pytest.fixture(scope="session")
def fine_profile():
    return solve_profile(build_grid(1e-3, 40.0, 2048))


@pytest.fixture(scope="session")
def wide_profile():
    """Large domain for checks sensitive to the truncation radius."""
    return solve_profile(build_grid(1e-3, 1000.0, 2048))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
