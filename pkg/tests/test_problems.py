import math

import numpy as np
import pytest
from scipy.integrate import quad

from mdplp import scenario
from mdplp.basis import fourier_basis
from mdplp.errors import ConfigError, InconsistentDynamics
from mdplp.model import Discounted, kernel_mass, validate_model
from mdplp.problems import (
    FisheriesParams,
    LqgParams,
    fisheries_consistent,
    fisheries_instance,
    get_problem,
    lqg_constants,
    lqg_instance,
    phi_utility,
    report_objective,
    riccati_average_cost,
)


def test_lqg_constants_default_parameters(lqg):
    # ||psi||_inf = L^2 (q + r), ||psi||_L = 4 L^2 sqrt(q^2 + r^2), L_Q by its formula
    assert lqg.cost_sup_norm == pytest.approx(150.0)
    assert lqg.cost_lip_norm == pytest.approx(400 * math.sqrt(1.25), rel=1e-12)
    assert lqg.cost_lip_norm == pytest.approx(447.214, abs=1e-3)
    assert lqg.lipschitz_kernel == pytest.approx(6.3831, abs=1e-4)


def test_lqg_kernel_constant_vanishes_for_wide_noise():
    # wide noise: L_Q decays like 1/sigma
    a, b = lqg_constants(LqgParams(sigma=1e3))[0], lqg_constants(LqgParams(sigma=1e5))[0]
    assert a < 1e-3 and b == pytest.approx(a / 100, rel=1e-3)


def test_lqg_params_validation():
    for kw in ({"sigma": 0}, {"r_cost": 0}, {"q_cost": -1}, {"L_box": 0}):
        with pytest.raises(ConfigError):
            LqgParams(**kw)


def test_lqg_density_normalized_against_adaptive_quadrature(lqg):
    rng = np.random.default_rng(1)
    k = rng.uniform(size=(50, 2))
    mass = kernel_mass(lqg, k[:, :1], k[:, 1:])
    assert np.max(np.abs(mass - 1)) < 1e-6
    # oracle: adaptive quadrature of the raw density over [-L, L] at one point
    s, a = 20 * k[0, 0] - 10, 20 * k[0, 1] - 10
    mean = 0.8 * s + 0.5 * a
    dens = lambda y: math.exp(-0.5 * (y - mean) ** 2) / math.sqrt(2 * math.pi)
    box = quad(dens, -10, 10, epsabs=1e-13)[0]
    # our density divided by the box mass integrates to 1 in raw coordinates
    from mdplp.model import kernel_nodes

    y, w = kernel_nodes(lqg, k[:1, :1], k[:1, 1:])
    raw_y = 20 * y[0, :, 0] - 10
    expect = quad(lambda t: t * dens(t) / box, -10, 10, epsabs=1e-13)[0]
    assert abs((w[0] * raw_y).sum() - expect) < 1e-8


def test_lqg_mean_outside_box_keeps_mass():
    m = lqg_instance(LqgParams(L_box=50.0))
    mass = kernel_mass(m, [[1.0], [0.0], [0.9]], [[1.0], [0.0], [0.95]])
    assert np.max(np.abs(mass - 1)) < 1e-8


def test_riccati_matches_closed_form():
    # scalar DARE: b^2 P^2 + (r - q b^2 - a^2 r) P - q r = 0
    p = LqgParams()
    a, b, q, r = p.theta1, p.rho_gain, p.q_cost, p.r_cost
    B = r - q * b * b - a * a * r
    P = (-B + math.sqrt(B * B + 4 * b * b * q * r)) / (2 * b * b)
    assert riccati_average_cost(p) == pytest.approx(P, rel=1e-12)
    assert riccati_average_cost(LqgParams(sigma=2.0)) == pytest.approx(4 * P, rel=1e-12)


def test_riccati_with_noise_mean_adds_steady_state_cost():
    p = LqgParams(mu=1.0)
    base = riccati_average_cost(LqgParams())
    extra = riccati_average_cost(p) - base
    # brute force over the steady-state line s = (rho a + mu) / (1 - theta1)
    a_grid = np.linspace(-10, 10, 200001)
    s_grid = (0.5 * a_grid + 1.0) / 0.2
    assert extra == pytest.approx(np.min(s_grid**2 + 0.5 * a_grid**2), rel=1e-6)


def test_lqg_wide_box_approaches_riccati():
    p = LqgParams(L_box=50.0)
    m = lqg_instance(p)
    basis = fourier_basis(m, 10)
    prog = scenario.assemble(m, basis, scenario.sample_uniform(m, 20000, 3), scenario.INF_CAP, use_cache=False)
    value = scenario.solve(prog).objective
    assert abs(value - riccati_average_cost(p)) <= 0.05 * riccati_average_cost(p)


def test_fisheries_default_parameters_consistent(fish):
    assert fisheries_consistent(FisheriesParams())
    assert fish.cost_sup_norm == pytest.approx(float(phi_utility(6.995)))
    # reward at s = a is phi(0) = 2 (0.5)^(1/3)
    assert float(phi_utility(0.0)) == pytest.approx(2 * 0.5 ** (1 / 3), abs=1e-12)
    assert float(phi_utility(0.0)) == pytest.approx(1.5874, abs=1e-4)


def test_fisheries_inconsistent_parameters_rejected():
    with pytest.raises(InconsistentDynamics):
        fisheries_instance(FisheriesParams(kappa_hi=3.0))
    with pytest.raises(ConfigError):
        FisheriesParams(kappa_lo=8.0)


def test_fisheries_density_normalized(fish):
    rng = np.random.default_rng(2)
    k = rng.uniform(size=(50, 2))
    assert np.max(np.abs(kernel_mass(fish, k[:, :1], k[:, 1:]) - 1)) < 1e-6
    # oracle: 1/(lambda y) on [c, c e^lambda] integrates to 1 in closed form, and
    # E[y] = c (e^lambda - 1) / lambda
    from mdplp.model import kernel_expectation

    s, a = 0.6, 0.3
    m = 0.005 + 6.995 * min(s, a)
    c = 1.1 * m * math.exp(-0.1 * m)
    raw_mean = kernel_expectation(fish, lambda y: 0.005 + 6.995 * y[..., 0], s, a)
    assert raw_mean == pytest.approx(c * (math.exp(0.5) - 1) / 0.5, rel=1e-10)


def test_fisheries_cost_and_reward_conventions(fish):
    s, a = np.array([[0.7]]), np.array([[0.2]])
    reward = float(phi_utility(6.995 * 0.5))
    assert fish.stage_cost(s, a)[0] == pytest.approx(reward)
    # harvesting more than the stock yields nothing
    assert fish.stage_cost(a, s)[0] == 0.0
    rmodel = fisheries_instance(objective="reward")
    shift = rmodel.metadata["cost_shift"]
    assert rmodel.stage_cost(s, a)[0] == pytest.approx(shift - reward)
    assert report_objective(rmodel, shift - 1.25) == pytest.approx(1.25)
    assert report_objective(fish, 0.5) == 0.5
    with pytest.raises(ConfigError):
        fisheries_instance(objective="profit")


def test_instances_validate_cleanly(lqg, fish):
    assert validate_model(lqg).flags == []
    assert validate_model(fish).flags == []


def test_get_problem_and_criterion():
    m = get_problem("lqg", criterion=Discounted(0.9))
    assert isinstance(m.criterion, Discounted)
    with pytest.raises(ConfigError):
        get_problem("pendulum")
