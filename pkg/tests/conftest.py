import pytest

_RESULTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records an acceptance result for the summary."""

    def record(n: int, ok: bool, detail: str):
        _RESULTS.append((n, ok, detail))
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
