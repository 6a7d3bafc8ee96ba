"""Shared pytest wiring: the acceptance-criteria summary block."""

import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
