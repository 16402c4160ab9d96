import pytest

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    key = mark.args[0]
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    if rep.when == "call" or rep.failed:
        passed = rep.passed and _ACCEPTANCE.get(key, (True,))[0]
        if rep.failed and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1]
        _ACCEPTANCE[key] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(
            f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
