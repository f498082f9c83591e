"""Collects acceptance outcomes and prints one line per criterion after the run."""
import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and rep.longrepr is not None:
        detail = (detail + " | " if detail else "") + str(rep.longrepr).strip().splitlines()[-1]
    prev = _RESULTS.get(number)
    if prev is None or prev[0] == "PASS":
        _RESULTS[number] = ("FAIL" if rep.failed else "PASS", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}: {detail}")
