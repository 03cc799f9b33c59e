"""Shared pytest plumbing.

The acceptance tests register one verdict line each; printing them in the
terminal summary keeps the pass/fail table visible even when pytest captures
per-test stdout.
"""

_acceptance_lines: list = []


def record_acceptance(line: str) -> None:
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
