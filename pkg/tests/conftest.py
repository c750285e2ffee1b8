import pytest

from branchforge.milp import gen_assignment

# one line per acceptance criterion, echoed at the end of the run
CRITERIA_LINES: list[str] = []


@pytest.fixture(scope="session")
def branchy():
    """An assignment instance that needs about 30 branching steps to close."""
    return gen_assignment(6, 8, 3)


@pytest.fixture
def report():
    def emit(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        CRITERIA_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
