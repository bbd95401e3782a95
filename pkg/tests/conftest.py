import numpy as np
import pytest

from dts.gmm import GmmPredictor, UnitGaussianPredictor, corner_mixture
from dts.schedule import make_schedule

_criteria: list[tuple[str, str, float]] = []


@pytest.fixture(scope="session")
def sched():
    return make_schedule("linear-beta", 100)


@pytest.fixture(scope="session")
def corners16(sched):
    return GmmPredictor(corner_mixture(16), sched)


@pytest.fixture(scope="session")
def unit_eps(sched):
    return UnitGaussianPredictor(sched)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        label = marker.args[0] if marker.args else item.name
        _criteria.append((label, rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, duration in _criteria:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {label}  ({duration:.2f}s)")
