"""Shared pytest hooks: per-criterion PASS/FAIL lines for the acceptance suite."""

ACCEPTANCE_FILE = "test_acceptance.py"
_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _acceptance_results[name] = "FAIL"
    elif report.when == "call" and report.passed:
        _acceptance_results.setdefault(name, "PASS")
    elif report.skipped:
        _acceptance_results.setdefault(name, "FAIL (skipped)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _acceptance_results.items():
        terminalreporter.write_line(f"{status} {name}")
