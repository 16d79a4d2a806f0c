"""Shared pytest hooks.

The acceptance module records one PASS/FAIL line per criterion; echoing them
in the terminal summary keeps them visible even though pytest captures
stdout during the tests themselves.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
