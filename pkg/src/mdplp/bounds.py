"""Explicit constants and certificates: dual bounds, sample sizes, tail bounds,
smoothing schedules and the composite infinite-to-finite bound."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, logsumexp

from .errors import (
    ConfigError,
    InfeasibleRegularizer,
    NegativeDiscriminant,
    PrecisionOutOfRange,
    PrecisionTooCoarse,
)
from .model import AverageCost, Discounted

SAMPLE_CAP = 10**15


class SampleSizeCapped(RuntimeWarning):
    pass


def _check_unit(name, v):
    if not 0.0 < v < 1.0:
        raise ConfigError(f"{name} must lie in (0,1), got {v}")


def kernel_factor(model) -> float:
    """max{L_Q, 1} + 1, the operator-norm factor of I - Q."""
    return max(model.lipschitz_kernel, 1.0) + 1.0


def dual_bound(criterion, theta_P: float, cost_sup: float, cost_lip: float, tau: Optional[float] = None) -> float:
    """Bound on the norm of the dual optimizer.

    Average cost: 1. Discounted: (theta_P + cost_sup/(1-tau)) / ((1-tau) theta_P - cost_lip).
    """
    if not theta_P > 0:
        raise ConfigError("theta_P must be positive")
    if isinstance(criterion, AverageCost) or criterion == "ac":
        return 1.0
    if isinstance(criterion, Discounted):
        tau = criterion.tau
    if tau is None or not 0.0 < tau < 1.0:
        raise ConfigError("discounted criterion needs tau in (0,1)")
    if math.isinf(theta_P):
        return 1.0 / (1.0 - tau)
    denom = (1.0 - tau) * theta_P - cost_lip
    if denom <= 0:
        raise InfeasibleRegularizer(
            f"(1 - tau) theta_P = {(1 - tau) * theta_P:g} must exceed the cost Lipschitz norm {cost_lip:g}"
        )
    return (theta_P + cost_sup / (1.0 - tau)) / denom


def binomial_tail(N: int, n_dims: int, epsilon: float) -> float:
    """sum_{i < n_dims} C(N, i) eps^i (1 - eps)^(N - i), in log space."""
    i = np.arange(min(n_dims, N + 1), dtype=float)
    logs = (
        gammaln(N + 1.0)
        - gammaln(i + 1.0)
        - gammaln(N - i + 1.0)
        + i * math.log(epsilon)
        + (N - i) * math.log1p(-epsilon)
    )
    return float(math.exp(min(0.0, logsumexp(logs))))


def sample_size_with_flag(n_dims: int, epsilon: float, beta: float, cap: int = SAMPLE_CAP):
    """(N, capped): the least N with binomial_tail(N, n_dims, eps) <= beta."""
    if n_dims < 1:
        raise ConfigError("n_dims must be at least 1")
    _check_unit("epsilon", epsilon)
    _check_unit("beta", beta)

    def ok(N):
        return binomial_tail(N, n_dims, epsilon) <= beta

    lo = max(n_dims - 1, 0)  # tail is 1 for N < n_dims
    hi = max(n_dims, 1)
    while not ok(hi):
        lo = hi
        hi = min(2 * hi, cap)
        if hi == lo:
            warnings.warn(f"sample size exceeds cap {cap}", SampleSizeCapped)
            return cap, True
    # invariant: not ok(lo), ok(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return int(hi), False


def sample_size(n_dims: int, epsilon: float, beta: float, cap: int = SAMPLE_CAP) -> int:
    return sample_size_with_flag(n_dims, epsilon, beta, cap)[0]


def _prefactor(model, rho_n, theta_P):
    return theta_P * rho_n * kernel_factor(model) + model.cost_lip_norm


def z_n(model, basis, theta_P: float) -> float:
    return 1.0 / _prefactor(model, basis.rho_n, theta_P)


def mdp_sample_requirement(model, basis, theta_P: float, epsilon: float, beta: float) -> int:
    """N(n+1, (z_n eps)^dim_K, beta)."""
    _check_unit("beta", beta)
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    p = (z_n(model, basis, theta_P) * epsilon) ** model.dim_K
    if not 0.0 < p < 1.0:
        raise PrecisionOutOfRange(f"(z_n eps)^dim_K = {p:g} is not in (0,1)")
    return sample_size(basis.n + 1, p, beta)


def tail_bound(model, basis, theta_P: float, alpha_norm: float, epsilon: float) -> float:
    """(||alpha|| rho_n (max{L_Q,1} + 1) + ||psi||_L) eps^(1/dim_K)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must lie in [0,1]")
    if alpha_norm > theta_P * (1 + 1e-9) + 1e-12:
        raise ConfigError("alpha_norm exceeds theta_P")
    return _prefactor(model, basis.rho_n, alpha_norm) * epsilon ** (1.0 / model.dim_K)


def optimal_theta_P(cost_sup, cost_lip, gamma, op_norm, rho_n, c_dual_norm, J_LB=None, theta_P=None) -> float:
    """Closed-form maximizer of z_n over theta_P > ||b|| / gamma.

    ``cost_sup`` plays the role of ||b||. J_LB defaults to -theta_P ||c||, the
    simple lower bound, which needs a reference ``theta_P``.
    """
    if not gamma > 0 or not op_norm > 0:
        raise ConfigError("gamma and op_norm must be positive")
    b = cost_sup
    if J_LB is None:
        if theta_P is None:
            raise ConfigError("either J_LB or a reference theta_P is required")
        J_LB = -theta_P * c_dual_norm
    lead = b / gamma
    radicand = (lead + b / (rho_n * op_norm)) * (lead - J_LB / c_dual_norm)
    if radicand < 0:
        raise NegativeDiscriminant(f"radicand {radicand:g} is negative")
    return lead + math.sqrt(radicand)


def mdp_theta_P_default(model) -> float:
    """max{L_Q, 1} ||psi||_inf."""
    return max(model.lipschitz_kernel, 1.0) * model.cost_sup_norm


def smoothing_constants(model, basis, theta_P: float, vartheta: float = 1.0):
    C1 = 2.0 * math.e * _prefactor(model, basis.rho_n, theta_P)
    C2 = 4.0 * theta_P * basis.rho_n**2 * math.sqrt(2.0 * model.dim_K / vartheta)
    return C1, C2


def _log_term(C1, epsilon):
    return max(math.log(C1 / epsilon), 1.0)


def smoothing_schedule(model, basis, theta_P: float, epsilon: float, vartheta: float = 1.0):
    """(eta, k, C1, C2) with eta = eps / (4 dim_K l) and k = ceil(C2 sqrt(l) / eps).

    l = max{log(C1/eps), 1}; the max guard keeps the edge eps = C1 finite.
    """
    C1, C2 = smoothing_constants(model, basis, theta_P, vartheta)
    if not 0.0 < epsilon <= C1:
        raise PrecisionTooCoarse(f"epsilon {epsilon:g} must lie in (0, C1 = {C1:g}]")
    ell = _log_term(C1, epsilon)
    eta = epsilon / (4.0 * model.dim_K * ell)
    k = max(1, math.ceil(C2 * math.sqrt(ell) / epsilon * (1 - 1e-12)))
    return eta, k, C1, C2


def epsilon_for_iterations(model, basis, theta_P: float, k: int, vartheta: float = 1.0) -> float:
    """Smallest a-priori precision reachable in ``k`` iterations (inverts the k formula)."""
    C1, C2 = smoothing_constants(model, basis, theta_P, vartheta)

    def need(eps):
        return C2 * math.sqrt(_log_term(C1, eps)) / eps - k

    if need(C1) > 0:
        raise PrecisionTooCoarse(f"{k} iterations do not reach epsilon = C1")
    lo = C1
    while need(lo) <= 0:
        lo /= 2.0
    return brentq(need, lo, C1, xtol=1e-14 * C1, rtol=1e-14)


def entropy_prox_constants(model, basis, theta_P: float):
    """(c, C) with C = dim_K and c = (e / dim_K) (theta_P rho_n (max{L_Q,1}+1) + ||psi||_L)."""
    C = float(model.dim_K)
    c = math.e / C * _prefactor(model, basis.rho_n, theta_P)
    return c, C


def semi_infinite_gap(model, residual_lip_norm: float) -> float:
    if residual_lip_norm < 0:
        raise ConfigError("residual norm must be nonnegative")
    return kernel_factor(model) * residual_lip_norm


def operator_norm(model) -> float:
    """Bound on ||A||: 1 + max{L_Q,1} for average cost, 1 + tau max{L_Q,1} discounted."""
    lq = max(model.lipschitz_kernel, 1.0)
    if isinstance(model.criterion, Discounted):
        return 1.0 + model.criterion.tau * lq
    return 1.0 + lq


@dataclass
class BoundsReport:
    route: str
    n: int
    theta_P: float
    theta_D: float
    gamma: Optional[float]
    rho_n: float
    z_n: float
    N_required: Optional[int]
    epsilon: float
    beta: float
    eta: Optional[float]
    k_required: Optional[int]
    C1: float
    C2: float
    prox_c: float
    prox_C: float
    composite_gap: float
    n_required: int
    D: float
    d: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def composite_bound(model, basis, theta_P: float, D: float, d: int, epsilon: float, beta: float, route: str = "scenario") -> BoundsReport:
    """Assemble every certificate for one configuration.

    The required basis size solves D (||c|| + theta_D ||A||) n^(-1/d) <= eps;
    for average cost the factor is 1 + max{L_Q,1}.
    """
    if not D > 0 or d < 1:
        raise ConfigError("need D > 0 and d >= 1")
    if route not in ("scenario", "smoothing"):
        raise ConfigError(f"route must be 'scenario' or 'smoothing', got {route!r}")
    crit = model.criterion
    theta_D = dual_bound(crit, theta_P, model.cost_sup_norm, model.cost_lip_norm)
    if isinstance(crit, Discounted):
        factor = 1.0 + theta_D * operator_norm(model)
        gamma = 1.0 - crit.tau
    else:
        factor = kernel_factor(model)
        gamma = None
    n_req = max(1, math.ceil((D * factor / epsilon) ** d * (1 - 1e-12)))
    composite_gap = D * factor * max(basis.n, 1) ** (-1.0 / d)
    C1, C2 = smoothing_constants(model, basis, theta_P)
    prox_c, prox_C = entropy_prox_constants(model, basis, theta_P)
    N_req = eta = k_req = None
    if route == "scenario":
        N_req = mdp_sample_requirement(model, basis, theta_P, epsilon, beta)
    else:
        eta, k_req, _, _ = smoothing_schedule(model, basis, theta_P, epsilon)
    return BoundsReport(
        route=route,
        n=basis.n,
        theta_P=theta_P,
        theta_D=theta_D,
        gamma=gamma,
        rho_n=basis.rho_n,
        z_n=z_n(model, basis, theta_P),
        N_required=N_req,
        epsilon=epsilon,
        beta=beta,
        eta=eta,
        k_required=k_req,
        C1=C1,
        C2=C2,
        prox_c=prox_c,
        prox_C=prox_C,
        composite_gap=composite_gap,
        n_required=n_req,
        D=D,
        d=d,
    )
