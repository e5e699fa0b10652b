import numpy as np
import pytest
from hypothesis import settings

from masskit.geometry import SphereGrid

settings.register_profile("masskit", deadline=None, derandomize=True)
settings.load_profile("masskit")


@pytest.fixture(scope="session")
def grid():
    return SphereGrid(16, 32)


@pytest.fixture(scope="session")
def axigrid():
    return SphereGrid(8, 16).axisymmetric()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = {}


@pytest.fixture
def record():
    """``record(n, ok, detail)`` stores one acceptance line for the summary."""

    def _record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
