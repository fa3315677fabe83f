import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def report(request):
    """``report(n, ok, detail)`` records one acceptance line and prints it."""
    lines = request.config._acceptance_lines

    def record(n, ok, detail=""):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
