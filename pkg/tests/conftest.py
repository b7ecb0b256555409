import warnings

import pytest

from stochsewing import gaussian_paths as gp


@pytest.fixture(scope="session")
def grid64():
    return gp.TimeGrid(0.0, 1.0, 64)


@pytest.fixture(scope="session")
def bm(grid64):
    return gp.sample_brownian(grid64, 2, 200, seed=3)


@pytest.fixture(scope="session")
def fbm(grid64):
    return gp.sample_fbm_volterra(0.3, grid64, 1, 200, seed=4)


@pytest.fixture(autouse=True)
def _quiet_nonconvergence():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*not decreasing.*")
        yield


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
