import os
import sys

import pytest

# Import the package from the repository root without installing it
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from birkhoff.means import run_cascade  # noqa: E402
from birkhoff.sequences import builtin_spec, spec_stream  # noqa: E402


@pytest.fixture(scope='session')
def example1_run():
    """Both cascades over 2^20 terms of the doubling-block sequence"""
    spec, obs_map = builtin_spec('example1')
    return run_cascade(spec_stream(spec, obs_map, name='example1'), 2 ** 20, order=3)


@pytest.fixture(scope='session')
def example2_run():
    """Both cascades over 2 * 10^6 terms of the cumulative-block sequence"""
    spec, obs_map = builtin_spec('example2')
    return run_cascade(spec_stream(spec, obs_map, name='example2'), 2 * 10 ** 6, order=3)


def pytest_addoption(parser):
    parser.addoption('--acceptance', action='store_true', default=False, help='Run full-length acceptance checks')


def pytest_configure(config):
    config.addinivalue_line('markers', 'acceptance: full-length runs, enabled with --acceptance')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--acceptance'):
        return
    skip = pytest.mark.skip(reason='needs --acceptance')
    for item in items:
        if 'acceptance' in item.keywords:
            item.add_marker(skip)
