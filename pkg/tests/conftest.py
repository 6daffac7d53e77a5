import pytest

_VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line and fail the test when it does not hold."""

    def record(name: str, passed: bool, detail: str) -> None:
        _VERDICTS.append((name, bool(passed), detail))
        print(f"{name}: {'PASS' if passed else 'FAIL'} ({detail})")
        assert passed, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
