import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from somaslam.core import LineLandmark, LinePolar, Pose2, make_landmark

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def segment_landmark(id, a, b, support=5) -> LineLandmark:
    """Landmark along the segment ``a``-``b``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    n = np.array([d[1], -d[0]]) / math.hypot(*d)
    return make_landmark(id, LinePolar(float(n @ a), math.atan2(n[1], n[0])), np.array([a, b]), support)


def assert_pose_close(p: Pose2, q, tol=1e-9):
    q = q if isinstance(q, Pose2) else Pose2(*q)
    assert abs(p.x - q.x) <= tol and abs(p.y - q.y) <= tol
    assert abs(math.remainder(p.theta - q.theta, 2 * math.pi)) <= tol


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
