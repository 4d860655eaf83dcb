import pytest


def pytest_configure(config):
    config.acceptance_results = []


@pytest.fixture
def record(request):
    """Collect one acceptance line; printed again in the terminal summary."""

    def _record(cid, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {name} ({detail})"
        request.config.acceptance_results.append((cid, line))
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = sorted(getattr(config, "acceptance_results", []))
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in results:
            terminalreporter.write_line(line)
