from __future__ import annotations

import pytest

from impulse_qvi import SpatialGrid, example, solve

# grid [-2, 3] x [0, 1] at 500 x 200 shared by the one-dimensional instances
BOX = ((-2.0,), (3.0,), (500,))
STEPS = 200


@pytest.fixture(scope="session")
def v1_spec():
    return example("ex31_v1")


@pytest.fixture(scope="session")
def v2_spec():
    return example("ex31_v2")


@pytest.fixture(scope="session")
def v1_grid(v1_spec):
    return solve(v1_spec, SpatialGrid(*BOX), STEPS)


@pytest.fixture(scope="session")
def v2_grid(v2_spec):
    return solve(v2_spec, SpatialGrid(*BOX), STEPS)


@pytest.fixture(scope="session")
def v2_small(v2_spec):
    return solve(v2_spec, SpatialGrid((-1.0,), (2.0,), (120,)), 60)


@pytest.fixture(scope="session")
def v2_series(v2_spec):
    """V2 solves on [-1, 2] x [0, 1] with cells = steps = 100, 200, 400, 800."""
    return {n: solve(v2_spec, SpatialGrid((-1.0,), (2.0,), (n,)), n) for n in (100, 200, 400, 800)}
