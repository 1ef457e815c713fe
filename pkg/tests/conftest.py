"""Shared fixtures.

The standard run (ion-transport, n = 2, N = 200, tau = 1e-4, T = 0.1) is
session scoped because several acceptance criteria audit the same
trajectory.  Its initial data u1 = 0.3 - 0.1 cos(pi x), u2 = 0.2 give the
vacancy u3 = 0.5 + 0.1 cos(pi x), which solves the heat equation exactly
because p = 1, q = s reduces the vacancy equation to d_t u3 = u3_xx.
"""
from __future__ import annotations

import numpy as np
import pytest

from crossdiff import Grid1D, SchemeParams, get_model, run_simulation

ACCEPTANCE_LINES = []

STANDARD = dict(model="ion-transport", n=2, cells=200, tau=1e-4, T=0.1, stride=10)


def standard_initial(x):
    return np.vstack([0.3 - 0.1 * np.cos(np.pi * x), np.full_like(x, 0.2)])


def heat_mode(x, t, decay=np.pi ** 2):
    return 0.5 + 0.1 * np.exp(-decay * t) * np.cos(np.pi * x)


@pytest.fixture(scope="session")
def standard_run():
    model = get_model(STANDARD["model"], n=STANDARD["n"])
    grid = Grid1D(1.0, STANDARD["cells"])
    params = SchemeParams(tau=STANDARD["tau"])
    u0 = standard_initial(grid.x)
    step_min = []

    def record(t, u, report):
        step_min.append(min(float(np.min(u)), float(np.min(1.0 - u.sum(axis=0)))))

    traj = run_simulation(model, grid, u0, STANDARD["T"], params,
                          output_stride=STANDARD["stride"], callback=record)
    return model, grid, params, u0, traj, np.array(step_min)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def check(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
