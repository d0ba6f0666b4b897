"""Shared fixtures. The expensive experiment runs are computed once per session."""

import numpy as np
import pytest

from mdplp import bounds, scenario, smoothing  # noqa: F401
from mdplp.basis import fourier_basis
from mdplp.problems import fisheries_instance, lqg_instance

# outcome lines of the acceptance criteria, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture(scope="session")
def lqg():
    return lqg_instance()


@pytest.fixture(scope="session")
def fish():
    return fisheries_instance()


@pytest.fixture(scope="session")
def lqg_sweep(lqg):
    """50 trials of the n=10 scenario program with theta_P = sup norm, at N = 1e3 and 1e5."""
    basis = fourier_basis(lqg, 10)
    theta = scenario.resolve_theta(lqg, "sup")
    out = {1000: [], 100000: []}
    for t in range(50):
        pts = scenario.sample_uniform(lqg, 100000, scenario.trial_seed(2024, t))
        full = scenario.assemble(lqg, basis, pts, theta, use_cache=False)
        for N in out:
            out[N].append(scenario.solve(full.subset(N)).objective)
    return {N: np.array(v) for N, v in out.items()}


def _trace(model, theta, ks):
    """Per-k runs with eta from the schedule; histories every k/2000 iterations."""
    basis = fourier_basis(model, 10)
    grid = smoothing.build_grid(model, basis)
    rows, runs = [], []
    for k in ks:
        r, run = smoothing.smoothing_trace(model, basis, theta, [k], grid, record_history=True, history_stride=max(1, k // 2000))
        rows.append(dict(zip(("k", "eps", "eta", "J_LB", "J_UB", "gap"), r[0])))
        runs.append(run[0])
    return rows, runs


@pytest.fixture(scope="session")
def lqg_trace(lqg):
    return _trace(lqg, bounds.mdp_theta_P_default(lqg), [10, 100, 1000, 10000, 100000])


@pytest.fixture(scope="session")
def fish_trace(fish):
    return _trace(fish, fish.cost_sup_norm, [10, 100, 1000, 10000, 100000])
