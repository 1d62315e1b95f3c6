import pytest

# criterion id -> (status, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record(criterion: str, passed: bool | None, detail: str) -> None:
    status = "INFO" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE[criterion] = (status, detail)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] criterion {key}: {detail}")
