import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmtwin.geometry import box_mesh, plane_mesh, scene_from_arrays, shoebox

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def room():
    """6 x 4 x 3 m shoebox: floor 0, ceiling 1, walls 2."""
    v, t, reg = shoebox()
    return scene_from_arrays(v, t, reg)


@pytest.fixture(scope="session")
def ground():
    """Large horizontal plane z = 0."""
    v, t = plane_mesh(np.zeros(3), np.array([0.0, 0.0, 1.0]), 100.0)
    return scene_from_arrays(v, t)


@pytest.fixture(scope="session")
def cube():
    v, t, _ = box_mesh((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    return scene_from_arrays(v, t)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
