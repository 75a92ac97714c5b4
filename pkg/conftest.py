"""Rootdir pytest hooks: the acceptance-criteria summary.

Tests anywhere in the repo (primary suite and server suite alike) mark
themselves with ``@pytest.mark.acceptance("<criterion>")``; the hooks
here collect pass/fail per criterion and print one line each at the end
of the run. Living at the rootdir, they see both test trees.
"""
from __future__ import annotations

import pytest

_ACCEPTANCE: dict[str, str] = {}


def record_acceptance(name: str, outcome: str) -> None:
    _ACCEPTANCE[name] = outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "acceptance" not in str(item.fspath):
        return
    marker = item.get_closest_marker("acceptance")
    if marker and marker.args:
        record_acceptance(marker.args[0], "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{_ACCEPTANCE[name]:4s}  {name}")


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): labels a check for the acceptance summary")
