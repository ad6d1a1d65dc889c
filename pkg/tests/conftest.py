import pytest

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the assertion itself stays in the test."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, text: str, ok: bool) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
