import re

import pytest

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = marker.args
    detail = dict(report.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else "error"
    _CRITERIA[(number, item.name)] = (report.passed, title, detail)


def _order(kv):
    number = str(kv[0][0])
    return int(re.match(r"\d+", number).group()), number


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, _), (ok, title, detail) in sorted(_CRITERIA.items(), key=_order):
        line = f"{'PASS' if ok else 'FAIL'}  [{number}] {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")
