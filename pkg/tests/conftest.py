import pytest

_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
