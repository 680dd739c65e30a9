import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request, capsys):
    """``record(label, ok, detail)`` prints one pass/fail line and keeps it for the summary."""
    def record(label, ok, detail):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
