import pytest

_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES] = {}


@pytest.fixture
def criterion(request):
    """``criterion(k, passed, detail)`` prints and records one acceptance line."""
    lines = request.config.stash[_LINES]

    def record(k, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {k}: {detail}"
        lines[k] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
