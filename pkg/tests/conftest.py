import pytest

_LINES = "_acceptance_lines"


def pytest_configure(config):
    setattr(config, _LINES, [])


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line, print it, then assert the outcome."""

    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        getattr(request.config, _LINES).append(line)
        print(line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, _LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
