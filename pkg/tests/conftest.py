import numpy as np
import pytest

from sdtest.data import TELEPHONE_FAULT
from sdtest.models import make_affine_constraint, make_normal_model, make_poisson_model

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria.append((mark.args[0], rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _criteria:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")


@pytest.fixture(scope="session")
def telephone():
    return np.array(TELEPHONE_FAULT, dtype=float)


@pytest.fixture(scope="session")
def normal():
    return make_normal_model()


@pytest.fixture(scope="session")
def poisson():
    return make_poisson_model()


@pytest.fixture(scope="session")
def mu_zero():
    return make_affine_constraint([0], [0.0], p=2)
