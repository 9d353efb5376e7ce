import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from kinodom.geometry import Pose


def random_pose(rng: np.random.Generator, scale: float = 5.0) -> Pose:
    return Pose(Rotation.from_rotvec(rng.normal(size=3)).as_matrix(), rng.normal(scale=scale, size=3))


def random_planar_pose(rng: np.random.Generator, scale: float = 5.0) -> Pose:
    x, y = rng.normal(scale=scale, size=2)
    return Pose.from_planar(x, y, rng.uniform(-np.pi, np.pi))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
