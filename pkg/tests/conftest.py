"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "details": []})
    if rep.when == "call" or rep.failed:
        entry["ok"] = entry["ok"] and rep.passed
        if rep.when == "call":
            entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"{'PASS' if e['ok'] else 'FAIL'} criterion {n}: {e['title']}"
        if e["details"]:
            line += " | " + "; ".join(e["details"])
        terminalreporter.write_line(line)
