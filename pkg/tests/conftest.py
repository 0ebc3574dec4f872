import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from portrait_forge import testkit

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def spec():
    return testkit.SyntheticSpec(seed=0)


@pytest.fixture(scope="session")
def model(spec):
    return testkit.make_model(spec)


@pytest.fixture(scope="session")
def small_model():
    """Full mesh with few basis components, for Jacobian and fitting checks."""
    return testkit.make_model(testkit.SyntheticSpec(seed=3, d_id=6, d_exp=5))


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    from portrait_forge.cli import write_fixtures
    d = tmp_path_factory.mktemp("fixtures")
    write_fixtures(d, seed=0, frames=24)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting -------------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line each in the terminal summary.

_CRITERIA = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = (m.args[0], m.args[1])


def pytest_runtest_logreport(report):
    key = getattr(report, "criterion", None)
    if key is None:
        return
    failed = report.failed or (report.when == "call" and report.skipped)
    _CRITERIA[key] = _CRITERIA.get(key, True) and not failed
    for name, value in report.user_properties:
        if name == "measured":
            _DETAILS.setdefault(key, []).append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key, ok in sorted(_CRITERIA.items()):
        number, title = key
        detail = "; ".join(dict.fromkeys(_DETAILS.get(key, [])))
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title}"
                                    + (f" ({detail})" if detail else ""))
