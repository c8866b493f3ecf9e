import pytest

_OUTCOMES: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES.setdefault(name, []).append("PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _OUTCOMES.items():
        verdict = "PASS" if all(o == "PASS" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
