import numpy as np
import pytest

from metainsert.env import EnvConfig, TaskParams


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def centered_task():
    """Perfectly calibrated plug-style task with 0.75 mm slack."""
    return TaskParams(goal_offset=(0.0, 0.0), block_side=13.5e-3, step_scale=1.0,
                      hole_side=15e-3, success_depth=5e-3, task_id=0)


@pytest.fixture
def centered_reset_config():
    return EnvConfig(reset_cube_side=0.0)


class FixedUniform:
    """Duck-typed generator whose uniform() returns the interval midpoint."""

    def uniform(self, low, high, size=None):
        mid = (np.asarray(low) + np.asarray(high)) / 2.0
        if size is None:
            return float(mid)
        return np.broadcast_to(mid, size if np.ndim(size) else (size,)).astype(float)


@pytest.fixture
def midpoint_rng():
    return FixedUniform()
