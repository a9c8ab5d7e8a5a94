"""Shared fixtures; collects acceptance-criterion verdicts for the summary."""

import pytest

_RESULTS = []


@pytest.fixture
def criterion():
    """Record one acceptance-criterion verdict and assert it.

    Usage: ``criterion(3, "metric estimation ...", ok)``.  The verdict is
    echoed in the terminal summary so every run shows one PASS/FAIL line
    per criterion.
    """

    def check(num, desc, ok):
        ok = bool(ok)
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'} - {desc}"
        _RESULTS.append((num, desc, ok))
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for num, desc, ok in sorted(_RESULTS):
        terminalreporter.write_line(f"  criterion {num}: {'PASS' if ok else 'FAIL'} - {desc}")
