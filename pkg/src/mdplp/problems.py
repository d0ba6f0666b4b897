"""The two shipped case studies: truncated LQG and a Ricker fisheries model."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, InconsistentDynamics
from .model import AverageCost, ControlModel, QuadratureSpec, RawModel, gauss_legendre_unit, to_unit_box

# quadrature support of the normal density, m +/- this many standard deviations;
# the neglected mass is below 1.3e-15
GAUSS_SPLIT = 8.0


@dataclass(frozen=True)
class LqgParams:
    theta1: float = 0.8
    rho_gain: float = 0.5
    sigma: float = 1.0
    mu: float = 0.0
    q_cost: float = 1.0
    r_cost: float = 0.5
    L_box: float = 10.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.r_cost > 0:
            raise ConfigError("r_cost must be positive")
        if self.q_cost < 0:
            raise ConfigError("q_cost must be nonnegative")
        if not self.L_box > 0:
            raise ConfigError("L_box must be positive")


@dataclass(frozen=True)
class FisheriesParams:
    theta1: float = 1.1
    theta2: float = 0.1
    lambda_noise: float = 0.5
    kappa_lo: float = 0.005
    kappa_hi: float = 7.0

    def __post_init__(self):
        vals = (self.theta1, self.theta2, self.lambda_noise, self.kappa_lo, self.kappa_hi)
        if not all(v > 0 for v in vals):
            raise ConfigError("fisheries parameters must be positive")
        if not self.kappa_lo < self.kappa_hi:
            raise ConfigError("kappa_lo must be below kappa_hi")


def _box_mass(lo, hi):
    """Phi(hi) - Phi(lo), evaluated in the tail that keeps precision."""
    upper = lo > 0
    return np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def lqg_constants(p: LqgParams):
    """(L_Q, sup norm, Lipschitz norm) of the truncated LQG model in unit coordinates."""
    L, sig = p.L_box, p.sigma
    trunc = float(ndtr((L - p.mu) / sig) - ndtr((-L - p.mu) / sig))
    lq = 2 * L * max(p.theta1, p.rho_gain) / (sig**2 * math.sqrt(2 * math.pi) * trunc)
    sup = L**2 * (p.q_cost + p.r_cost)
    lip = 4 * L**2 * math.hypot(p.q_cost, p.r_cost)
    return lq, sup, lip


def lqg_instance(params: LqgParams = LqgParams(), criterion=AverageCost(), quadrature=None) -> ControlModel:
    """s' = theta1 s + rho a + xi with Gaussian noise, on S = A = [-L, L].

    The next-state density is the normal density centred at theta1 s + rho a + mu,
    renormalized to the state interval so that it is a probability density on S.
    Quadrature runs over m +/- 8 sigma clipped to S, where the density lives
    up to a mass below 1.3e-15. When m lies outside S by d the window is
    anchored at the nearest edge with half-width min(8 sigma, 40 sigma^2 / d).
    """
    p = params
    L, sig = p.L_box, p.sigma

    def mean(s, a):
        return p.theta1 * s[:, 0] + p.rho_gain * a[:, 0] + p.mu

    def density(y, s, a):
        m = mean(s, a)
        z = _box_mass((-L - m) / sig, (L - m) / sig)
        t = (y[..., 0] - m[:, None]) / sig
        return np.exp(-0.5 * t * t) / (sig * math.sqrt(2 * math.pi) * z[:, None])

    def cost(s, a):
        return p.q_cost * s[:, 0] ** 2 + p.r_cost * a[:, 0] ** 2

    def support(s, a):
        m = mean(s, a)
        # a mean outside S puts the mass against the nearest edge, where the
        # density decays with length sigma^2 / (|m| - L)
        c = np.clip(m, -L, L)
        d = np.abs(m) - L
        half = np.where(d > 0, np.minimum(GAUSS_SPLIT * sig, 40.0 * sig**2 / np.where(d > 0, d, 1.0)), GAUSS_SPLIT * sig)
        lo = np.maximum(c - half, -L)
        hi = np.minimum(c + half, L)
        return lo[:, None], hi[:, None]

    lq, sup, lip = lqg_constants(p)
    raw = RawModel(
        dim_s=1,
        dim_a=1,
        kernel_density=density,
        stage_cost=cost,
        lipschitz_kernel=lq,
        cost_sup_norm=sup,
        cost_lipschitz=lip,
        criterion=criterion,
        quadrature=quadrature or QuadratureSpec(),
        support=support,
        name="lqg",
    )
    return to_unit_box(
        [-L, -L],
        [L, L],
        raw,
        lipschitz_kernel=lq,
        cost_lip_norm=lip,
        metadata={"params": asdict(p), "objective": "cost", "cost_shift": 0.0},
    )


def riccati_average_cost(p: LqgParams) -> float:
    """Optimal average cost of the untruncated scalar LQG problem.

    Iterates the discrete algebraic Riccati equation to a fixed point P. With
    zero-mean noise the value is P sigma^2; a noise mean adds the cheapest
    steady state (s, a) with s = theta1 s + rho a + mu.
    """
    a, b, q, r = p.theta1, p.rho_gain, p.q_cost, p.r_cost
    P = q
    for _ in range(100000):
        nxt = q + a * a * P - (a * b * P) ** 2 / (r + b * b * P)
        done = abs(nxt - P) < 1e-15 * max(1.0, P)
        P = nxt
        if done:
            break
    value = P * p.sigma**2
    if p.mu != 0:
        # minimize q s^2 + r a^2 on the line (1 - theta1) s = rho a + mu
        direction = np.array([b, 1.0 - a])
        point = np.array([p.mu / (1.0 - a), 0.0]) if a != 1 else np.array([0.0, -p.mu / b])
        wq = np.array([q, r])
        t = -(wq * point * direction).sum() / (wq * direction**2).sum()
        best = point + t * direction
        value += float((wq * best**2).sum())
    return value


def phi_utility(z):
    return 3.0 * np.cbrt(np.asarray(z, float) + 0.5) - np.cbrt(0.5)


def fisheries_consistent(p: FisheriesParams, grid: int = 20001) -> bool:
    a = np.linspace(p.kappa_lo, p.kappa_hi, grid)
    crit = 1.0 / p.theta2
    if p.kappa_lo < crit < p.kappa_hi:
        a = np.append(a, crit)
    base = p.theta1 * a * np.exp(-p.theta2 * a)
    return bool(base.min() >= p.kappa_lo and (base * math.exp(p.lambda_noise)).max() <= p.kappa_hi)


def fisheries_kernel_lipschitz(p: FisheriesParams, grid: int = 4001, step: float = 1e-6, safety: float = 1.5):
    """Numerical L_Q in unit coordinates: max of ||q(.|k) - q(.|k')||_1 / ||k - k'||.

    The L1 distance is the supremum of |Qu(k) - Qu(k')| over ||u||_inf <= 1.
    It is integrated piecewise between the four support endpoints.
    """
    width = p.kappa_hi - p.kappa_lo
    lam = p.lambda_noise
    mbar = np.linspace(0.0, 1.0 - step, grid)
    m1 = p.kappa_lo + width * mbar
    m2 = p.kappa_lo + width * (mbar + step)
    c1 = p.theta1 * m1 * np.exp(-p.theta2 * m1)
    c2 = p.theta1 * m2 * np.exp(-p.theta2 * m2)
    edges = np.sort(np.stack([c1, c1 * math.exp(lam), c2, c2 * math.exp(lam)], axis=1), axis=1)
    x, w = gauss_legendre_unit(16)
    left, span = edges[:, :-1], np.diff(edges, axis=1)
    y = left[:, :, None] + span[:, :, None] * x
    wy = span[:, :, None] * w

    def dens(c):
        inside = (y >= c[:, None, None]) & (y <= c[:, None, None] * math.exp(lam))
        return np.where(inside, 1.0 / (lam * y), 0.0)

    l1 = (np.abs(dens(c1) - dens(c2)) * wy).sum(axis=(1, 2))
    return safety * float(np.max(l1 / step))


def fisheries_instance(params: FisheriesParams = FisheriesParams(), objective: str = "cost", quadrature=None) -> ControlModel:
    """Ricker population model with harvest, on S = A = [kappa_lo, kappa_hi].

    s' = theta1 m exp(-theta2 m + xi) with m = min(a, s) and xi uniform on
    [0, lambda]; the next-state density is 1/(lambda y) on [c, c e^lambda],
    c = theta1 m exp(-theta2 m). The stage function is
    phi(s - a) 1{s >= a}.

    ``objective="cost"`` minimizes that function directly. ``"reward"``
    maximizes it by minimizing (shift - reward), with the shift equal to the
    maximal reward on the box; ``report_objective`` undoes the shift.
    """
    p = params
    if not fisheries_consistent(p):
        raise InconsistentDynamics("theta1 a exp(-theta2 a + xi) leaves [kappa_lo, kappa_hi]")
    if objective not in ("cost", "reward"):
        raise ConfigError(f"objective must be 'cost' or 'reward', got {objective!r}")
    lam = p.lambda_noise
    top = float(phi_utility(p.kappa_hi - p.kappa_lo))
    shift = top if objective == "reward" else 0.0

    def base(s, a):
        m = np.minimum(a[:, 0], s[:, 0])
        return p.theta1 * m * np.exp(-p.theta2 * m)

    def density(y, s, a):
        c = base(s, a)[:, None]
        yy = y[..., 0]
        inside = (yy >= c) & (yy <= c * math.exp(lam))
        return np.where(inside, 1.0 / (lam * np.where(yy > 0, yy, 1.0)), 0.0)

    def reward(s, a):
        z = s[:, 0] - a[:, 0]
        return np.where(z >= 0, phi_utility(np.maximum(z, 0.0)), 0.0)

    def cost(s, a):
        r = reward(s, a)
        return shift - r if objective == "reward" else r

    def support(s, a):
        c = base(s, a)
        return c[:, None], (c * math.exp(lam))[:, None]

    raw = RawModel(
        dim_s=1,
        dim_a=1,
        kernel_density=density,
        stage_cost=cost,
        lipschitz_kernel=0.0,
        cost_sup_norm=top,
        # slope of phi on the smooth piece, largest at z = 0
        cost_lipschitz=float(np.cbrt(0.5) ** -2),
        quadrature=quadrature or QuadratureSpec(),
        support=support,
        name="fisheries",
    )
    lq = fisheries_kernel_lipschitz(p)
    return to_unit_box(
        [p.kappa_lo, p.kappa_lo],
        [p.kappa_hi, p.kappa_hi],
        raw,
        lipschitz_kernel=lq,
        metadata={"params": asdict(p), "objective": objective, "cost_shift": shift},
    )


def report_objective(model: ControlModel, value: float) -> float:
    """Translate a minimized average cost back to the model's native objective."""
    if model.metadata.get("objective") == "reward":
        return model.metadata["cost_shift"] - value
    return value


def get_problem(name: str, **kwargs) -> ControlModel:
    if name == "lqg":
        return lqg_instance(**kwargs)
    if name == "fisheries":
        return fisheries_instance(**kwargs)
    raise ConfigError(f"unknown problem {name!r}")
