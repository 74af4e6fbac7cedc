import pytest

_CRITERION_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Recorder for acceptance criteria: prints one PASS/FAIL line per
    criterion and repeats them in the terminal summary."""

    def record(num: int, name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {num:02d} [{name}] {detail}"
        _CRITERION_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERION_LINES):
            terminalreporter.write_line(line)
