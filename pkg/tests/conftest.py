import numpy as np
import pytest

from gtdsaddle.domains import baird, chain50, energy


@pytest.fixture(scope="session")
def baird_bundle():
    return baird()


@pytest.fixture(scope="session")
def chain_bundle():
    return chain50()


@pytest.fixture(scope="session")
def energy_bundle():
    return energy()


@pytest.fixture(scope="session")
def bundles(baird_bundle, chain_bundle, energy_bundle):
    return {"baird": baird_bundle, "chain50": chain_bundle, "energy": energy_bundle}


@pytest.fixture(params=["baird", "chain50", "energy"])
def bundle(request, bundles):
    return bundles[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n, title = mark.args
        _CRITERIA[n] = (title, report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcome, duration = _CRITERIA[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}  ({duration:.1f}s)")
