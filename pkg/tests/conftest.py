import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


@pytest.fixture
def line3():
    """Three collinear reference points used throughout the worked examples."""
    return np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
