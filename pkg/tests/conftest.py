import pytest

# (criterion, passed, detail) lines recorded by test_acceptance.py
ACCEPTANCE = []


def _line(criterion, passed, detail):
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    return f"criterion {criterion}: {status}  {detail}"


@pytest.fixture
def record():
    def _record(criterion, passed, detail):
        """``passed`` is True, False or None (criterion skipped)."""
        ACCEPTANCE.append((criterion, passed, detail))
        print(_line(criterion, passed, detail))
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda r: str(r[0])):
        terminalreporter.write_line(_line(criterion, passed, detail))
