import re

_results = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.failed:
        _results[n] = _results.get(n, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        status = "PASS" if _results[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {CRITERIA[n]}: {status}")
