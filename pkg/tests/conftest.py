import pytest

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one PASS/FAIL line per acceptance criterion."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
