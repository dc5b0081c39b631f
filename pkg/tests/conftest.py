import pytest

from genrec.config import preset_config

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def length_config():
    return preset_config("length")


@pytest.fixture
def synthetic_config():
    return preset_config("synthetic")


@pytest.fixture
def verdict():
    """Record one acceptance line; call it before asserting so failures are reported too."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
