import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}
_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA[item.nodeid] = (mark.args[0], mark.args[1])


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    if report.when == "call" or report.outcome != "passed":
        if hasattr(report, "wasxfail"):
            status = "FAIL (expected failure: %s)" % report.wasxfail
        elif report.outcome == "passed":
            status = "PASS"
        elif report.outcome == "skipped":
            status = "SKIP"
        else:
            status = "FAIL"
        if report.when == "call" or report.nodeid not in _RESULTS:
            _RESULTS[report.nodeid] = status


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    # one line per criterion; a criterion with several parts passes only if all do
    grouped = {}
    for nodeid, (num, title) in _CRITERIA.items():
        if nodeid in _RESULTS:
            grouped.setdefault(num, []).append((title, _RESULTS[nodeid]))
    terminalreporter.section("acceptance criteria")
    for num in sorted(grouped):
        parts = grouped[num]
        failing = [(t, st) for t, st in parts if st != "PASS"]
        title = "; ".join(t for t, _ in parts)
        if not failing:
            terminalreporter.write_line(f"criterion {num}: PASS  {title}")
        else:
            detail = "; ".join(f"{t}: {st}" for t, st in failing)
            terminalreporter.write_line(f"criterion {num}: FAIL  {title}  [{detail}]")
