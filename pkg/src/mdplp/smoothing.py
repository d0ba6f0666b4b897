"""Entropy-smoothed dual and the fast gradient scheme (average cost).

With x = (rho, alpha) and f_alpha(k) = psi(k) + sum_i alpha_i (Qu_i - u_i)(k)
the smoothed objective is

    phi_eta(x) = -rho + eta log <exp((rho - f_alpha)/eta), lambda>,

a log-partition function of the Gibbs density exp(g/eta) with
g = rho - f_alpha. It does not depend on rho. All integrals over K come from
one fixed tensor Gauss-Legendre grid, so the gradient below is the exact
gradient of the discretized phi_eta.

Reported bounds use the maximization convention of the average-cost LP:
J_LB = min_k f_alphahat(k) is attained by a feasible point of the
semi-infinite program, and J_UB = <psi, yhat> + theta_P ||<Qu - u, yhat>||
comes from the averaged Gibbs measures.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import bounds
from .basis import BasisSet, qu_values
from .errors import ConfigError, NonFiniteIterate, UnsupportedDimension
from .model import ControlModel, Discounted, gauss_legendre_unit

GRID_NODES = 256
GRID_LIMIT = 1 << 20


def prox_T(q, alpha, theta_P: float) -> np.ndarray:
    """argmin over ||beta|| <= theta_P of q.beta + ||beta - alpha||^2 / 2, i.e. xi (alpha - q)."""
    q = np.asarray(q, float)
    alpha = np.asarray(alpha, float)
    if q.shape != alpha.shape:
        raise ConfigError("q and alpha must have the same shape")
    d = alpha - q
    norm = float(np.linalg.norm(d))
    if norm <= theta_P:
        return d
    return d * (theta_P / norm)


def _prox_block(q, x, theta_P):
    """T on a packed (rho, alpha) vector; rho is not constrained."""
    out = np.empty_like(x)
    out[0] = x[0] - q[0]
    out[1:] = prox_T(q[1:], x[1:], theta_P)
    return out


@dataclass
class SmoothingGrid:
    """Tensor Gauss-Legendre nodes on K with psi and Qu - u tabulated."""

    points: np.ndarray  # (P, dim_K)
    weights: np.ndarray  # (P,), sums to 1
    psi: np.ndarray  # (P,)
    D: np.ndarray  # (n, P), (Qu_i - u_i) at the nodes
    nodes_per_dim: int

    @property
    def size(self) -> int:
        return len(self.weights)


def build_grid(model: ControlModel, basis: BasisSet, nodes_per_dim: int = GRID_NODES) -> SmoothingGrid:
    if isinstance(model.criterion, Discounted):
        raise ConfigError("the smoothing route is implemented for the average-cost criterion")
    dk = model.dim_K
    if nodes_per_dim**dk > GRID_LIMIT:
        raise UnsupportedDimension(f"{nodes_per_dim}^{dk} grid nodes exceed {GRID_LIMIT}")
    x, w = gauss_legendre_unit(nodes_per_dim)
    mesh = np.stack(np.meshgrid(*([x] * dk), indexing="ij"), axis=-1).reshape(-1, dk)
    wts = np.stack(np.meshgrid(*([w] * dk), indexing="ij"), axis=-1).reshape(-1, dk).prod(axis=1)
    s, a = mesh[:, : model.dim_s], mesh[:, model.dim_s :]
    psi = np.asarray(model.stage_cost(s, a), float)
    if basis.n:
        D = qu_values(model, basis, mesh, use_cache=False) - basis.evaluate_stacked(s)
    else:
        D = np.zeros((0, len(mesh)))
    return SmoothingGrid(mesh, wts, psi, np.ascontiguousarray(D), nodes_per_dim)


def _gibbs(grid: SmoothingGrid, alpha, eta):
    """(y, log partition of -f_alpha/eta) on the grid."""
    f = grid.psi + alpha @ grid.D if grid.D.shape[0] else grid.psi.copy()
    t = f * (-1.0 / eta)
    top = t.max()
    e = np.exp(t - top)
    e *= grid.weights
    Z = e.sum()
    e /= Z
    return e, top + math.log(Z), f


def gibbs_expectation(values, weights, g, eta):
    """Expectations of ``values`` (m, P) under the density proportional to weights exp(g/eta)."""
    g = np.asarray(g, float)
    logw = np.log(np.asarray(weights, float)) + g / eta
    p = np.exp(logw - logsumexp(logw))
    return np.asarray(values, float) @ p


def gibbs_gradient(model, basis, rho, alpha, eta, grid: Optional[SmoothingGrid] = None):
    """A* y for the Gibbs density y of g = -psi + rho - sum alpha_i (Q - I)u_i.

    Returns ([-1, <(Q - I)u_1, y>, ..., <(Q - I)u_n, y>], log partition), where
    the log partition is log <exp(g/eta), lambda>. The gradient of phi_eta is
    c - A* y with c = (-1, 0, ..., 0).
    """
    if not eta > 0:
        raise ConfigError("eta must be positive")
    grid = grid or build_grid(model, basis)
    alpha = np.asarray(alpha, float)
    y, logz, _ = _gibbs(grid, alpha, eta)
    out = np.empty(basis.n + 1)
    out[0] = -1.0
    out[1:] = grid.D @ y
    return out, float(logz + rho / eta)


def phi_eta(model, basis, rho, alpha, eta, grid: Optional[SmoothingGrid] = None) -> float:
    """The discretized smoothed objective -rho + eta log <exp(g/eta), lambda>."""
    grid = grid or build_grid(model, basis)
    _, logz, _ = _gibbs(grid, np.asarray(alpha, float), eta)
    return float(eta * logz)


def smoothed_gradient(grid, x, eta) -> np.ndarray:
    """c - A* y at the packed point x; the rho entry is identically 0."""
    y, _, _ = _gibbs(grid, x[1:], eta)
    g = np.zeros_like(x)
    g[1:] = -(grid.D @ y)
    return g


def entropy(grid, alpha, eta) -> float:
    """Relative entropy of the Gibbs density with respect to the uniform measure, by quadrature."""
    y, logz, f = _gibbs(grid, np.asarray(alpha, float), eta)
    safe = np.where(y > 0, y, 1.0)
    return float(np.sum(np.where(y > 0, y * (np.log(safe) - np.log(grid.weights)), 0.0)))


@dataclass
class SmoothingRun:
    eta: float
    k: int
    theta_P: float
    L: float
    iterate_w: np.ndarray
    iterate_z: np.ndarray
    iterate_alpha: np.ndarray
    # running sums of (j+1) <psi, y_j> and (j+1) <Qu - u, y_j>
    ybar_psi: float
    ybar_D: np.ndarray
    weight_sum: float
    history: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def ybar_weights_total(self) -> float:
        """Sum of the weights 2(j+1)/((k+1)(k+2)) over j = 0..k."""
        return 2.0 * self.weight_sum / ((self.k + 1) * (self.k + 2))

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.iterate_alpha[1:]

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "J_LB", "J_UB", "gap", "grad_norm"])
            for row in self.history:
                wr.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _upper(theta_P, S_psi, S_D, weight):
    psi_hat = S_psi / weight
    D_hat = S_D / weight
    return psi_hat + theta_P * float(np.linalg.norm(D_hat))


def run_algorithm1(
    model: ControlModel,
    basis: BasisSet,
    theta_P: float,
    eta: float,
    k: int,
    record_history: bool = False,
    history_stride: int = 1,
    grid: Optional[SmoothingGrid] = None,
    L: Optional[float] = None,
) -> SmoothingRun:
    """k iterations of the optimal scheme from w = 0, evaluating gradients at w^(0..k).

    L defaults to 4 n; the step size is eta / L. The averaged Gibbs measure
    uses weights 2(j+1)/((k+1)(k+2)), kept as running sums.
    """
    if not eta > 0:
        raise ConfigError("eta must be positive")
    if k < 1:
        raise ConfigError("k must be at least 1")
    if not theta_P > 0:
        raise ConfigError("theta_P must be positive")
    grid = grid or build_grid(model, basis)
    n = basis.n
    L = float(L) if L is not None else 4.0 * max(n, 1)
    if not L > 0:
        raise ConfigError("L must be positive")
    step = eta / L
    w = np.zeros(n + 1)
    R = np.zeros(n + 1)
    z = np.zeros(n + 1)
    alpha_it = np.zeros(n + 1)
    S_psi, S_D, wsum = 0.0, np.zeros(n), 0.0
    history = []
    D, psi, wq = grid.D, grid.psi, grid.weights
    for j in range(k + 1):
        if n:
            f = psi + w[1:] @ D
        else:
            f = psi
        t = f * (-1.0 / eta)
        t -= t.max()
        np.exp(t, out=t)
        t *= wq
        t /= t.sum()
        Dy = D @ t
        grad = np.zeros(n + 1)
        grad[1:] = -Dy
        S_psi += (j + 1) * float(psi @ t)
        S_D += (j + 1) * Dy
        wsum += j + 1
        r = step * grad
        R += 0.5 * (j + 1) * r
        z = _prox_block(R, np.zeros(n + 1), theta_P)
        alpha_it = _prox_block(r, w, theta_P)
        if record_history and (j % history_stride == 0 or j == k):
            weight = 0.5 * (j + 1) * (j + 2)
            ub = _upper(theta_P, S_psi, S_D, weight)
            lb = float(np.min(psi + alpha_it[1:] @ D)) if n else float(np.min(psi))
            history.append((j, lb, ub, ub - lb, float(np.linalg.norm(grad))))
        if j == k:
            break
        w = (2.0 / (j + 3)) * z + ((j + 1.0) / (j + 3)) * alpha_it
        if not np.all(np.isfinite(w)):
            raise NonFiniteIterate(f"non-finite iterate at step {j}: {w}")
    return SmoothingRun(eta, k, float(theta_P), L, w, z, alpha_it, S_psi, S_D, wsum, history)


def _lower_refined(model, basis, grid, alpha, candidates=5, tol=1e-3):
    """min over K of psi + alpha.(Qu - u): grid scan, then bounded local search."""
    vals = grid.psi + alpha @ grid.D if basis.n else grid.psi
    best = float(vals.min())
    flags = []
    if basis.n == 0:
        return best, flags
    dk = model.dim_K
    x, _ = gauss_legendre_unit(grid.nodes_per_dim)
    edges = np.concatenate([[0.0], 0.5 * (x[1:] + x[:-1]), [1.0]])
    ds = model.dim_s

    def f(p):
        p = np.clip(np.asarray(p, float), 0.0, 1.0)[None, :]
        qu = qu_values(model, basis, p, use_cache=False)[:, 0]
        u = basis.evaluate(p[:, :ds])[0]
        return float(model.stage_cost(p[:, :ds], p[:, ds:])[0] + alpha @ (qu - u))

    order = np.argsort(vals)[:candidates]
    refined = best
    for idx in order:
        multi = np.unravel_index(idx, (grid.nodes_per_dim,) * dk)
        lo = np.array([edges[max(m - 1, 0)] for m in multi])
        hi = np.array([edges[min(m + 2, grid.nodes_per_dim)] for m in multi])
        res = minimize(f, grid.points[idx], method="Powell", bounds=list(zip(lo, hi)), options={"xtol": 1e-10, "ftol": 1e-13})
        refined = min(refined, float(res.fun))
    if best - refined > tol * max(1.0, abs(best)):
        flags.append("MaximizerUncertain")
    return min(best, refined), flags


def posterior_bounds(run: SmoothingRun, model: ControlModel, basis: BasisSet, grid: Optional[SmoothingGrid] = None, refine: bool = True):
    """(J_LB, J_UB) for a finished run.

    J_UB uses the accumulated statistics of the averaged Gibbs measure. J_LB
    is the minimum over K of psi + alphahat.(Qu - u), by grid scan and local
    refinement; a refinement that moves the minimum beyond tolerance adds a
    MaximizerUncertain flag to the run.
    """
    grid = grid or build_grid(model, basis)
    ub = _upper(run.theta_P, run.ybar_psi, run.ybar_D, run.weight_sum)
    if refine:
        lb, flags = _lower_refined(model, basis, grid, run.alpha_hat)
        for fl in flags:
            if fl not in run.flags:
                run.flags.append(fl)
    else:
        lb = float(np.min(grid.psi + run.alpha_hat @ grid.D)) if basis.n else float(np.min(grid.psi))
    return lb, ub


def smoothing_trace(model, basis, theta_P, ks, grid=None, refine=True, record_history=False, history_stride=100):
    """One run per k with eta from the schedule at the a-priori precision reachable in k steps.

    Returns rows (k, eps_prior, eta, J_LB, J_UB, gap) and the runs.
    """
    grid = grid or build_grid(model, basis)
    rows, runs = [], []
    for k in ks:
        eps = bounds.epsilon_for_iterations(model, basis, theta_P, int(k))
        eta = bounds.smoothing_schedule(model, basis, theta_P, eps)[0]
        run = run_algorithm1(model, basis, theta_P, eta, int(k), record_history, history_stride, grid)
        lb, ub = posterior_bounds(run, model, basis, grid, refine)
        rows.append((int(k), eps, eta, lb, ub, ub - lb))
        runs.append(run)
    return rows, runs
