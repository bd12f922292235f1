from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def tiny_config_path():
    return CONFIGS / "tiny.json"


@pytest.fixture(scope="session")
def desk_config_path():
    return CONFIGS / "desk.json"


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one ``AC<n> PASS|FAIL`` line and fail the test when the criterion is not met."""

    def record(number, title, passed, detail=""):
        ACCEPTANCE_LINES.append(f"AC{number:02d} {'PASS' if passed else 'FAIL'}  {title}  {detail}".rstrip())
        assert passed, f"criterion {number} not met: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
