import os
import sys

import numpy as np
import pytest

# Add parent directory to Python path
parent_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.append(parent_dir)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run Monte-Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo acceptance test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
