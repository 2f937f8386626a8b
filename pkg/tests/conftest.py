import pytest

_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and again in the terminal summary."""

    def emit(tag: str, passed: bool, detail: str) -> None:
        line = f"{tag} {'PASS' if passed else 'FAIL'}: {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
