import pytest

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_log(request):
    """Per-session record ``criterion -> (passed, detail)`` of the acceptance suite."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
