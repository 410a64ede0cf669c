from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def verdict():
    """verdict(k, name, ok, detail) records and prints one pass/fail line."""
    def emit(k: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        _LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
