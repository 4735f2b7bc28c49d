import pytest

from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_ACCEPTANCE: list[tuple[str, bool, str, float]] = []


@pytest.fixture
def acceptance():
    """Record one criterion line; shown again in the terminal summary."""

    def record(name: str, passed: bool, detail: str, seconds: float) -> None:
        line = (name, bool(passed), detail, seconds)
        _ACCEPTANCE.append(line)
        print(_format(line))

    return record


def _format(line) -> str:
    name, ok, detail, seconds = line
    return f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({seconds:.2f} s)"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(_format(line))
