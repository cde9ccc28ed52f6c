import os

import numpy as np
import pytest

from stackwave.follower import FollowerProblem
from stackwave.geometry import MovingDomain, build_partition
from stackwave.oracle import read_golden
from stackwave.spaces import GridSpec

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden", "v1")


def golden(name):
    return read_golden(os.path.join(GOLDEN, f"{name}.csv"))


def make_follower(ny=30, T=4.0, k=0.2, sigma=1.0, mode="overlap", split_time=None, v2=None, tol=1e-10, init=None):
    grid = GridSpec.from_cfl(ny, T)
    dom = MovingDomain(k, T)
    part = build_partition(mode, T, split_time, grid=grid)
    if v2 is None:
        v2 = np.zeros(grid.shape)
    elif callable(v2):
        yy, tt = np.meshgrid(grid.y, grid.t)
        v2 = v2(yy, tt)
    return FollowerProblem(grid, dom, part, sigma, v2, init, tol=tol)


def smooth_v2(seed=0):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(-1, 1, 3)
    return lambda y, t: a * np.sin(np.pi * y) * np.cos(t) + b * y * (1 - y) + c * np.sin(2 * np.pi * y) * np.sin(t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; printed again in the terminal summary."""

    def record(label, passed, **measured):
        detail = " ".join(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}" for k, v in measured.items())
        line = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _ACCEPTANCE[label] = line
        with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for label in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(_ACCEPTANCE[label])
