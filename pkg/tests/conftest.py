"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""

import time

import pytest

_results: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.blockspec_start = time.monotonic()
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "runs_last: schedule after every other test")


def pytest_collection_modifyitems(config, items):
    # the suite-runtime check must see every other test finish first
    last = [it for it in items if it.get_closest_marker("runs_last")]
    rest = [it for it in items if not it.get_closest_marker("runs_last")]
    items[:] = rest + last


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "setup" and rep.failed:
        _results[number] = ("FAIL", title, "setup failed")
    elif rep.when == "call":
        _results[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, title, detail = _results[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
