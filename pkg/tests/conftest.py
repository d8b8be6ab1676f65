import pytest

from gronstab.assess import Study
from gronstab.netmodel import load_case

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def net9():
    return load_case("ieee9")


@pytest.fixture(scope="session")
def study_low(net9):
    """Bus-1 fault, light damping."""
    return Study.prepare(net9, 1, lam=0.5)


@pytest.fixture(scope="session")
def study_high(net9):
    """Bus-1 fault, heavy damping."""
    return Study.prepare(net9, 1, lam=8.0)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
