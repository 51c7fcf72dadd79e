import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one ``PASS``/``FAIL`` line for an acceptance criterion."""
    def record(number: int, name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({name}): {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
