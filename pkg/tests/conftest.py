import pytest

_verdicts: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = report.failed and report.when in ("setup", "call", "teardown")
    if report.when == "call" or failed:
        detail = ""
        if failed:
            detail = str(getattr(report.longrepr, "reprcrash", None) and report.longrepr.reprcrash.message or "")
            detail = detail.splitlines()[0] if detail else ""
        _verdicts[number] = ("FAIL" if failed else "PASS", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        verdict, title, detail = _verdicts[number]
        line = f"criterion {number} {verdict}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
