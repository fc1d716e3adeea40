"""Shared pytest wiring: per-criterion pass/fail lines for the acceptance
suite, printed as a terminal section so they survive output capture."""

import re

import pytest

_RESULTS = {}
_DETAILS = {}


def register_detail(number: int, text: str):
    """Called by acceptance tests to attach a measurement to their line."""
    _DETAILS[number] = text


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call":
        return
    m = re.match(r"test_criterion_(\d+)", item.name)
    if m:
        _RESULTS[int(m.group(1))] = rep.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        word = "PASS" if _RESULTS[number] == "passed" else "FAIL"
        detail = _DETAILS.get(number)
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d}: {word}{suffix}")
