import sys


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, collected by test_acceptance.py
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
