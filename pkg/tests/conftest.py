import re

_ACCEPTANCE = {}
_NAME = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    match = _NAME.search(report.nodeid)
    if not match:
        return
    key = (int(match.group(1)), match.group(2).replace("_", " "))
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(key, "PASS")
        _ACCEPTANCE[key] = "FAIL" if (report.outcome != "passed" or prev == "FAIL") else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), verdict in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"criterion {num:2d} {verdict}: {title}")
