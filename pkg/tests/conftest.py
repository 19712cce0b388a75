import pytest

# filled by tests/test_acceptance.py: (criterion, status, detail)
ACCEPTANCE: list[tuple[int, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the caller flips it to PASS on success."""
    def open_line(number, detail):
        entry = [number, "FAIL", detail]
        ACCEPTANCE.append(entry)
        return entry
    return open_line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(ACCEPTANCE, key=lambda e: e[0]):
        terminalreporter.write_line(f"[{status}] criterion {number}: {detail}")
