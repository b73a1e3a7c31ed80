import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from artifact.hermite import make_activation

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tanh1():
    return make_activation("tanh", K=1)


@pytest.fixture(scope="session")
def tanh2():
    return make_activation("tanh", K=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """record(n, passed, detail): store one verdict line per criterion."""
    def record(n, passed, detail=""):
        ACCEPTANCE[n] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
