from collections.abc import Generator

import numpy as np
import pytest

from wormhole_heat.constitutive import reset_permeability_clips
from wormhole_heat.grid import StaggeredGrid
from wormhole_heat.logging_utils import clear_error_history


@pytest.fixture(autouse=True)
def _reset_error_history() -> Generator[None, None, None]:
    """Ensure each test starts with a clean error history and clip counter."""

    clear_error_history()
    reset_permeability_clips()
    yield
    clear_error_history()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture()
def grid2d() -> StaggeredGrid:
    return StaggeredGrid((0.0, 0.0), (1.0, 2.0), (5, 4))


@pytest.fixture()
def grid3d() -> StaggeredGrid:
    return StaggeredGrid((0.0, 0.0, 0.0), (1.0, 1.0, 0.5), (4, 3, 2))
