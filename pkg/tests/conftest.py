import pytest

from corpus import queens

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def queens4():
    return queens(4)


@pytest.fixture
def record_acceptance():
    """Store a one-line verdict for the acceptance summary."""

    def record(criterion: str, passed: bool, detail: str = ""):
        ACCEPTANCE[criterion] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0])):
        passed, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}")
