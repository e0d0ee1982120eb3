import numpy as np
import pytest

_ACCEPTANCE = []
_SETUP_TIME = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion of the build")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    # shared fixtures do their work during setup, so count it toward the criterion
    if rep.when == "setup":
        _SETUP_TIME[item.nodeid] = rep.duration
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        total = rep.duration + (_SETUP_TIME.get(item.nodeid, 0.0) if rep.when == "call" else 0.0)
        _ACCEPTANCE.append((marker.args[0], marker.args[1], rep.passed, total))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, duration in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}  ({duration:.2f}s)")
