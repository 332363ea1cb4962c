"""Collects one result line per acceptance criterion and prints them after the run."""

ACCEPTANCE_LINES: list[str] = []


def record(name: str, passed: bool, measured: str, limit: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {measured} (required {limit})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
