import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one ``PASS``/``FAIL`` line for the acceptance summary, then assert."""

    def record(name: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
