"""Shared pytest plumbing.

The acceptance battery files one verdict line per criterion through the
`criterion_report` fixture; the terminal-summary hook replays those lines
in a dedicated section at the end of the run so the pass/fail ledger is
visible regardless of verbosity or capture settings.
"""

import pytest

_acceptance_lines = []


@pytest.fixture(scope="session")
def criterion_report():
    """Callable (number, name, ok, detail) -> records one verdict line.

    Tests call it BEFORE asserting, so a failing criterion still leaves
    its FAIL line in the summary instead of vanishing into a traceback.
    """

    def record(number, name, ok, detail):
        verdict = "PASS" if ok else "FAIL"
        _acceptance_lines.append(
            "criterion %02d %s %s (%s)" % (number, verdict, name, detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(_acceptance_lines):
        terminalreporter.write_line(line)
