import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pksns.field import Grid

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def grid():
    return Grid(16, 33, 16)


@pytest.fixture(scope="session")
def small_grid():
    return Grid(8, 17, 8)


# acceptance summary: one line per criterion

_AC_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion")


def pytest_runtest_logreport(report):
    label = report.user_properties and dict(report.user_properties).get("acceptance")
    if not label:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _AC_RESULTS.get(label, True)
        _AC_RESULTS[label] = prev and report.outcome == "passed"


@pytest.fixture(autouse=True)
def _acceptance_label(request):
    m = request.node.get_closest_marker("acceptance")
    if m:
        request.node.user_properties.append(("acceptance", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_AC_RESULTS, key=lambda s: int(s.split("-")[1])):
        terminalreporter.write_line(f"{label}: {'PASS' if _AC_RESULTS[label] else 'FAIL'}")
