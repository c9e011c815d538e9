import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, passed, text)``."""
    lines = request.config.stash[_LINES]

    def emit(number: int, passed: bool, text: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}"
        print(line)
        lines.append((number, line))
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
