import pytest

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    props = dict(report.user_properties)
    if "criterion" in props and (report.when == "call" or report.failed):
        status = "PASS" if report.passed else "FAIL"
        _criteria.append(f"{status}  {props['criterion']}: {props.get('detail', '')}")


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
