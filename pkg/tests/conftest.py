import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """Run every test against the built-in defaults, not the caller's RSUB_* settings."""
    for name in list(os.environ):
        if name.startswith("RSUB_"):
            monkeypatch.delenv(name, raising=False)
    yield


@pytest.fixture
def p_grid_coarse():
    return [round(0.05 * j, 2) for j in range(1, 20)]
