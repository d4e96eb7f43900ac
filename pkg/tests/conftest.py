"""Shared pytest plumbing: collects acceptance-criterion verdicts and prints
them as one PASS/FAIL line each in the terminal summary."""

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    """Callable the acceptance tests use to register their verdict line."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
