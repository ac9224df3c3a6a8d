import sys

import numpy as np
import pytest

from merge_maddpg import _backend
from merge_maddpg.config import ScenarioConfig


@pytest.fixture(params=_backend.available())
def backend(request):
    previous = _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(previous)


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def raw_cfg():
    return ScenarioConfig(normalize_observations=False)


def central_diff(f, x, h=1e-4):
    """Five-point central-difference gradient of scalar ``f`` at flat ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x - 2 * e) - 8 * f(x - e) + 8 * f(x + e) - f(x + 2 * e)) / (12 * h)
    return g


def rel_err(a, b, floor=1e-6):
    """Elementwise relative error; magnitudes below ``floor`` count as ``floor``
    so entries near zero are judged against FD round-off, not against 0."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(
            f"criterion {n} {'PASS' if ok else 'FAIL'} [{mod.TITLES[n]}] {detail}")
