import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

FIXTURES = Path(__file__).parent / "fixtures"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_runtest_logreport(report):
    marker = _criteria_marker(report)
    if marker is None:
        return
    number, title = marker
    entry = _criteria.setdefault(number, {"title": title, "failed": [], "ran": 0, "skipped": 0})
    if report.when == "call" or report.outcome != "passed":
        if report.skipped:
            entry["skipped"] += 1
        else:
            entry["ran"] += report.when == "call"
            if report.failed:
                entry["failed"].append(report.nodeid.split("::")[-1])


def _criteria_marker(report):
    for key, value in report.user_properties:
        if key == "criterion":
            return value
    return None


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", (m.args[0], m.args[1])))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        if e["failed"]:
            status = "FAIL"
        elif e["ran"]:
            status = "PASS"
        else:
            status = "SKIP"
        detail = f" (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        tr.write_line(f"criterion {number} {status}: {e['title']}{detail}")
