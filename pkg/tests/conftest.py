import pytest

_RESULTS = pytest.StashKey[dict]()
ACCEPTANCE_CRITERIA = range(1, 11)


@pytest.fixture
def criterion(request):
    """``record(number, ok, detail)`` for the acceptance summary; returns ``ok``."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(number, ok, detail):
        results[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_CRITERIA:
        ok, detail = results.get(n, (False, "no result recorded (test errored or was deselected)"))
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
