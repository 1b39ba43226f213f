import pytest

_lines = pytest.StashKey[dict]()


@pytest.fixture
def record(request):
    """Log one acceptance line: ``record(label, ok, detail)``; an int label means a numbered criterion."""
    lines = request.config.stash.setdefault(_lines, {})

    def _record(label, ok, detail):
        name = f"criterion {label:2d}" if isinstance(label, int) else label
        lines[name] = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_lines, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines.values():
            terminalreporter.write_line(line)
