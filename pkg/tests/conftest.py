import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Record and print one ``CRITERION n: PASS|FAIL detail`` line."""
    lines = request.config.stash.setdefault(_KEY, [])

    def record(n, ok, detail):
        line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
