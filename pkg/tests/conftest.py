import numpy as np
import pytest

from edgeflow.model import GridSpec, PhysicalParams


@pytest.fixture
def small_params():
    return PhysicalParams(L=6.0, u=1.0)


@pytest.fixture
def small_grid(small_params):
    # stiff wall, short strip: a few hundred sites
    return GridSpec(x_min=-4.0, x_max=1.75, hx=0.25, ny=24)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record (and print) one pass/fail line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
