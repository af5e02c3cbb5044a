"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import re

_results = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::Test(\d+)\w*", report.nodeid)
    if not match:
        return
    key = int(match.group(1))
    title = report.nodeid.split("::")[1]
    failed = report.failed and report.when in ("setup", "call", "teardown")
    ok, _ = _results.get(key, (True, title))
    _results[key] = (ok and not failed, title)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results):
        ok, title = _results[key]
        name = re.sub(r"^Test\d+", "", title)
        terminalreporter.write_line(f"criterion {key} {name}: {'PASS' if ok else 'FAIL'}")
