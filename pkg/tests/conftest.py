import sys

import numpy as np
import pytest

from gffmart.domain import DomainSpec, build_grid


@pytest.fixture(scope="session")
def square():
    return DomainSpec.unit_square()


@pytest.fixture(scope="session")
def disk():
    return DomainSpec.unit_disk()


@pytest.fixture(scope="session")
def grid64(square):
    return build_grid(square, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def mc_close(est, target, se, k=3.0):
    """``|est - target| <= k se``."""
    return abs(est - target) <= k * se


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
