import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TRAJECTORY = os.path.join(ROOT, "data", "adk_dims2_ca.txt")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_angles(rng, m, dim, avoid=1e-6):
    """Angles on the slice that extraction reproduces exactly."""
    theta = rng.uniform(-np.pi, np.pi, m - 2)
    if dim == 2:
        return theta, None
    theta[0] = 0.0
    psi = rng.uniform(avoid, np.pi - avoid, m - 2)
    return theta, psi


def random_rotation(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
