import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a criterion outcome; the line is printed in the terminal summary."""

    def record(number, passed, detail):
        CRITERIA[number] = (bool(passed), detail)
        assert passed, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
