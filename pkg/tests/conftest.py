import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcrecomb.core import PointCloud, TriangleMesh

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cloud(rng, n, extra=True) -> PointCloud:
    pos = rng.normal(0, 5, (n, 3))
    if not extra:
        return PointCloud(pos)
    return PointCloud(pos, {
        "intensity": rng.uniform(0, 255, n).astype(np.float32),
        "ring": rng.integers(0, 128, n).astype(np.uint16),
        "t": rng.integers(0, 10**8, n).astype(np.uint32),
    })


def random_soup(rng, n, center=(10.0, 0.0, 0.0), spread=3.0, size=1.0) -> TriangleMesh:
    c = np.asarray(center) + rng.uniform(-spread, spread, (n, 3))
    v = np.repeat(c, 3, axis=0) + rng.normal(0, size, (3 * n, 3))
    return TriangleMesh(v, np.arange(3 * n).reshape(n, 3))


def unit_square(x=5.0, half=0.5) -> TriangleMesh:
    """Square in the plane X = x, facing the sensor."""
    v = [[x, -half, -half], [x, half, -half], [x, half, half], [x, -half, half]]
    return TriangleMesh(v, [[0, 2, 1], [0, 3, 2]])


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
