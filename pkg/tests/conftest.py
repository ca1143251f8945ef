"""Shared pytest wiring.

The acceptance gate prints one PASS/FAIL line per criterion, but
pytest captures stdout from passing tests. The gate also registers
each line here, and the terminal-summary hook echoes them after the
run where capture cannot swallow them.
"""

criterion_lines = []


def pytest_terminal_summary(terminalreporter):
    if not criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in criterion_lines:
        terminalreporter.write_line(line)
