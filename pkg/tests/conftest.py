import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[_LINES_KEY]

    def record(number, ok, text):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {text}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
