import pytest

from bdsagnac.materials import load_database

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def db():
    return load_database()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
