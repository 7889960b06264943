"""Shared pytest wiring: the acceptance suite's one-line-per-check summary.

Acceptance tests report a human-readable line through the
``acceptance_mark`` fixture once their assertions hold; failures are
recorded by name instead. The collected lines print as a terminal
section at the end of the run, so a plain ``pytest -v`` shows one
pass/fail line per guarantee regardless of output capture.
"""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_mark():
    def mark(line: str) -> None:
        ACCEPTANCE_LINES.append(f"PASS {line}")
    return mark


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if (
        report.when == "call"
        and report.failed
        and item.fspath.basename == "test_acceptance.py"
    ):
        ACCEPTANCE_LINES.append(f"FAIL {item.name}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
