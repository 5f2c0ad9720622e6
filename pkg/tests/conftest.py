from __future__ import annotations

import re

import pytest

_LINES: dict[int, str] = {}


def _criterion_number(name: str) -> int | None:
    m = re.match(r"test_criterion_(\d+)", name)
    return int(m.group(1)) if m else None


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion and assert it."""
    n = _criterion_number(request.node.name)

    def record(ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[n] = line
        print(line)
        assert ok, line

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = _criterion_number(item.name)
    if n is not None and rep.when == "call" and rep.failed and n not in _LINES:
        _LINES[n] = f"criterion {n:2d}: FAIL  raised {call.excinfo.typename}: {call.excinfo.value}"


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
