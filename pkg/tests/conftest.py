import numpy as np
import pytest

from diffdistill._seeding import derived_seed
from diffdistill.gmm_world import GmmComponent, GmmSpec, default_world, sample_dataset


@pytest.fixture(scope="session")
def world():
    return default_world()


@pytest.fixture(scope="session")
def train_test(world):
    # same streams as `gen-data --default-world --n-per-class 500 --seed 11`
    train = sample_dataset(world, 500, derived_seed(11, 0))
    test = sample_dataset(world, 500, derived_seed(11, 1))
    return train, test


@pytest.fixture
def unit_world():
    return GmmSpec(2, [[GmmComponent(1.0, [0.0, 0.0], [1.0, 1.0])]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -------------------------------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    n = getattr(report, "_criterion", None)
    if n is None:
        return
    if report.when == "call" or report.outcome != "passed":
        detail = dict(report.user_properties).get("detail", "")
        prev = _criteria.get(n)
        if prev is None or prev[0] == "PASS":
            _criteria[n] = ("PASS" if report.passed else "FAIL", detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result()._criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
