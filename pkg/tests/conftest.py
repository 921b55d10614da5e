import pytest

from avgdg.mesh import build_structured_unit_square

ACCEPTANCE = []


def record(criterion, passed, detail):
    ACCEPTANCE.append((criterion, bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def square():
    return {n: build_structured_unit_square(n) for n in (1, 2, 4, 8)}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda t: str(t[0])):
        terminalreporter.write_line(
            f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
        )
