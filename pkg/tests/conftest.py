"""Shared test plumbing: the acceptance-criteria verdict reporter.

Verdict lines from tests/test_acceptance.py are collected here and replayed
in the terminal summary, so the one-line-per-criterion record is visible
even when pytest captures passing tests' stdout.
"""

import pytest

_verdicts: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} - {detail}"
        _verdicts.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_verdicts):
            terminalreporter.write_line(line)
