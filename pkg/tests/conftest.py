import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    """Register the outcome of one acceptance criterion for the end-of-run summary."""

    def _record(number: int, title: str, passed: bool, detail: str):
        ACCEPTANCE[number] = (title, passed, detail)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    missing = [n for n in range(1, 12) if n not in ACCEPTANCE]
    if missing and len(ACCEPTANCE) > 1:
        tr.write_line(f"criteria not run: {missing}")
