import re

import pytest

from critbubble.core import make_critical_pair
from critbubble.energy import interaction_constants
from critbubble.radial import solve_ground_state, solve_w


@pytest.fixture(scope="session")
def pair6():
    return make_critical_pair(6, 2.0)


@pytest.fixture(scope="session")
def gs6(pair6):
    return solve_ground_state(pair6)


@pytest.fixture(scope="session")
def w6(pair6, gs6):
    return solve_w(pair6, gs6)


@pytest.fixture(scope="session")
def consts6(gs6, w6):
    return interaction_constants(gs6, w6)


@pytest.fixture(scope="session")
def pair8():
    return make_critical_pair(8, 5.0 / 3.0)


@pytest.fixture(scope="session")
def gs8(pair8):
    return solve_ground_state(pair8)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def add(n, ok, detail):
        line = f"criterion {str(n):>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(re.match(r"criterion\s+(\d+)", s).group(1))):
            terminalreporter.write_line(line)
