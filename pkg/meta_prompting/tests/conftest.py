import numpy as np
import pytest

from meta_prompting.autodiff import set_check_finite


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="also run tests marked slow")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical or end-to-end runs taking minutes; need --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="slow; pass --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def finite_checks():
    """NaN/Inf detection is on for every test."""
    set_check_finite(True)
    yield
    set_check_finite(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
