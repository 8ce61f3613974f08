"""Per-criterion PASS/FAIL summary for tests marked ``acceptance(n, title)``."""
from __future__ import annotations

from collections import defaultdict

import pytest

_OUTCOMES: dict[int, dict] = defaultdict(lambda: {"title": "", "failed": [], "passed": 0, "skipped": 0})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    entry = _OUTCOMES[mark.args[0]]
    entry["title"] = mark.args[1]
    if rep.passed:
        entry["passed"] += 1
    elif rep.skipped:
        entry["skipped"] += 1
    else:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        e = _OUTCOMES[n]
        if e["failed"]:
            status = "FAIL"
        elif e["passed"]:
            status = "PASS"
        else:
            status = "SKIP"
        detail = f" (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {n:2d} {status}: {e['title']}{detail}")
