import numpy as np
import pytest
from hypothesis import settings
from scipy.spatial.transform import Rotation

from sfam.model import CameraPoses, MeasurementMatrix, ShapeSequence

settings.register_profile("sfam", deadline=None, max_examples=40)
settings.load_profile("sfam")


def rigid_scene(T=20, N=10, seed=0):
    """Random rigid shape seen by a smoothly rotating orthographic camera.

    Smooth motion matters: camera signs are resolved by temporal continuity.
    """
    rng = np.random.default_rng(seed)
    shape = rng.standard_normal((3, N)) * np.array([[3.0], [2.0], [1.0]])
    shape -= shape.mean(axis=1, keepdims=True)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    start = Rotation.random(random_state=seed)
    steps = Rotation.from_rotvec(0.15 * np.arange(T)[:, None] * axis)
    rots = (steps * start).as_matrix()
    R = CameraPoses(rots[:, :2, :])
    S = ShapeSequence(np.tile(shape, (T, 1)))
    W = MeasurementMatrix.from_raw(R.project(S))
    return W, R, S


@pytest.fixture
def rigid():
    return rigid_scene()


def random_rotation(rng):
    return Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
