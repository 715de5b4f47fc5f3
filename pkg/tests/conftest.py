"""Collects outcomes of tests marked ``acceptance`` and prints one line per criterion."""

import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, label): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, label = marker.args
    entry = _results.setdefault(number, [label, True, ""])
    if report.failed:
        entry[1] = False
    detail = getattr(item, "acceptance_detail", "")
    if detail:
        entry[2] = detail


@pytest.fixture
def detail(request):
    """Lets an acceptance test attach a short measured summary to its result line."""

    def put(text):
        request.node.acceptance_detail = text

    return put


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        label, ok, info = _results[number]
        line = f"{'PASS' if ok else 'FAIL'}  {number}. {label}"
        if info:
            line += f"  [{info}]"
        terminalreporter.write_line(line)
