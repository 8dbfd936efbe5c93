import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""

    def record(number, ok, detail, elapsed=None, budget=None):
        timing = ""
        if elapsed is not None:
            timing = f" [{elapsed:.0f}s"
            if budget is not None:
                timing += f" of {budget:.0f}s budget" + ("" if elapsed <= budget else ", over")
            timing += "]"
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}{timing}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
