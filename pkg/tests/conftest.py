import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert on it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
        print(ACCEPTANCE_LINES[number])
        assert ok, ACCEPTANCE_LINES[number]

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
