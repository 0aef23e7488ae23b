"""Shared pytest configuration: repository on sys.path and the `slow` marker."""

import sys
from pathlib import Path

import pytest

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).parent))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance scans")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance scans (run with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
