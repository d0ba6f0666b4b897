"""Scenario programs: sampled constraints plus an l2 ball on the basis coefficients.

The program is

    maximize  obj . (rho, alpha)
    s.t.      G (rho, alpha) <= h,   ||alpha||_2 <= theta_P,

with one row per sampled state-action pair. ``solve`` runs a primal-dual
interior-point method on the cone R_+^N x Q^(n+1) with Nesterov-Todd scaling
and Mehrotra correction; the n+1 by n+1 normal equations are formed densely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from . import bounds
from .basis import BasisSet, qu_values
from .errors import ConfigError, Infeasible, MaxIterations
from .model import ControlModel, Discounted, gauss_legendre_unit

INF_CAP = 1e6


def resolve_theta(model: ControlModel, mode) -> float:
    """theta_P from a CLI-style mode: 'paper', 'sup', 'inf' or a number."""
    if isinstance(mode, (int, float)):
        value = float(mode)
    elif mode == "paper":
        value = bounds.mdp_theta_P_default(model)
    elif mode == "sup":
        value = model.cost_sup_norm
    elif mode in ("inf", "infinity"):
        value = INF_CAP
    else:
        try:
            value = float(mode)
        except (TypeError, ValueError):
            raise ConfigError(f"unknown theta_P mode {mode!r}") from None
    if not value > 0:
        raise ConfigError("theta_P must be positive")
    return value


def trial_seed(base_seed: int, trial: int) -> np.random.SeedSequence:
    """Independent stream for one trial; order of evaluation does not matter."""
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(trial),))


def sample_uniform(model: ControlModel, N: int, seed) -> np.ndarray:
    """N i.i.d. uniform points on K as an (N, dim_K) array.

    Uses numpy's PCG64 generator; rows are drawn in order, so a prefix of a
    larger draw under the same seed is the smaller draw.
    """
    if N < 1:
        raise ConfigError("N must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.random((int(N), model.dim_K))


@dataclass
class ScenarioProgram:
    n: int
    N: int
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    objective_vector: np.ndarray
    theta_P: float
    samples: np.ndarray
    seed: object = None
    criterion: str = "ac"

    def subset(self, N: int) -> "ScenarioProgram":
        """The program built from the first N samples."""
        return ScenarioProgram(
            self.n,
            int(N),
            self.constraint_matrix[:N],
            self.rhs[:N],
            self.objective_vector,
            self.theta_P,
            self.samples[:N],
            self.seed,
            self.criterion,
        )


def _state_mean(model, basis, nodes=256):
    """Integral of each basis function against the uniform measure on S."""
    if basis.n == 0:
        return np.zeros(0)
    x, w = gauss_legendre_unit(nodes)
    mesh = np.stack(np.meshgrid(*([x] * model.dim_s), indexing="ij"), axis=-1).reshape(-1, model.dim_s)
    wt = np.prod(np.stack(np.meshgrid(*([w] * model.dim_s), indexing="ij"), axis=-1).reshape(-1, model.dim_s), axis=1)
    return basis.evaluate(mesh).T @ wt


def assemble(model: ControlModel, basis: BasisSet, samples, theta_P: float, seed=None, use_cache: bool = True, nu_mean=None) -> ScenarioProgram:
    """Rows [1, u_i(s_j) - Qu_i(s_j,a_j)] with rhs psi(s_j,a_j) for average cost.

    For a discounted criterion the rows are [(1 - tau), u_i - tau Qu_i] and the
    objective is rho + sum alpha_i <nu, u_i>, with nu uniform on S unless
    ``nu_mean`` supplies the integrals <nu, u_i>.
    """
    samples = np.asarray(samples, float).reshape(-1, model.dim_K)
    if np.any(samples < 0) or np.any(samples > 1):
        raise ConfigError("samples must lie in the unit box")
    s, a = samples[:, : model.dim_s], samples[:, model.dim_s :]
    qu = qu_values(model, basis, samples, use_cache=use_cache) if basis.n else np.zeros((0, len(samples)))
    u = basis.evaluate(s).T if basis.n else np.zeros((0, len(samples)))
    rhs = np.asarray(model.stage_cost(s, a), float)
    obj = np.zeros(basis.n + 1)
    obj[0] = 1.0
    if isinstance(model.criterion, Discounted):
        tau = model.criterion.tau
        G = np.column_stack([np.full(len(samples), 1.0 - tau), (u - tau * qu).T])
        obj[1:] = _state_mean(model, basis) if nu_mean is None else np.asarray(nu_mean, float)
        tag = "dc"
    else:
        G = np.column_stack([np.ones(len(samples)), (u - qu).T])
        tag = "ac"
    return ScenarioProgram(basis.n, len(samples), G, rhs, obj, float(theta_P), samples, seed, tag)


@dataclass
class ScenarioSolution:
    rho_star: float
    alpha_star: np.ndarray
    objective: float
    dual_objective: float
    dual_multipliers: np.ndarray
    ball_multiplier: float
    kkt_residuals: tuple
    iterations: int
    method: str = "ipm"
    cap_active: bool = False
    ball_active: bool = False
    converged: bool = True
    flags: list = field(default_factory=list)

    @property
    def alpha_norm(self) -> float:
        return float(np.linalg.norm(self.alpha_star))

    @property
    def gap(self) -> float:
        return abs(self.objective - self.dual_objective)

    def to_dict(self, program: Optional[ScenarioProgram] = None, certificate=None) -> dict:
        out = {
            "objective": self.objective,
            "rho_star": self.rho_star,
            "alpha_norm": self.alpha_norm,
            "kkt_residuals": list(self.kkt_residuals),
            "iterations": self.iterations,
            "method": self.method,
            "cap_active": self.cap_active,
        }
        if program is not None:
            out.update({"seed": _jsonable_seed(program.seed), "N": program.N, "n": program.n, "theta_P": program.theta_P})
        if certificate is not None:
            out["certificate"] = certificate.value
        return out

    def to_json(self, program=None, certificate=None) -> str:
        return json.dumps(self.to_dict(program, certificate))


def _jsonable_seed(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": int(seed.entropy), "spawn_key": list(seed.spawn_key)}
    return seed


# ---------------------------------------------------------------------------
# second-order cone helpers; vectors are (u0, u1) with u0 scalar

def _soc_prod(u, v):
    return np.concatenate([[u @ v], u[0] * v[1:] + v[0] * u[1:]])


def _soc_div(lam, r):
    """x with lam o x = r."""
    l0, l1 = lam[0], lam[1:]
    det = l0 * l0 - l1 @ l1
    x0 = (l0 * r[0] - l1 @ r[1:]) / det
    x1 = (r[1:] - x0 * l1) / l0
    return np.concatenate([[x0], x1])


def _soc_step(x, d):
    """Largest t with x + t d in the cone (x interior)."""
    a = d[0] ** 2 - d[1:] @ d[1:]
    b = x[0] * d[0] - x[1:] @ d[1:]
    c = x[0] ** 2 - x[1:] @ x[1:]
    # q(t) = a t^2 + 2 b t + c, c > 0
    roots = []
    if abs(a) < 1e-300:
        if b < 0:
            roots.append(-c / (2 * b))
    else:
        disc = b * b - a * c
        if disc >= 0:
            sq = math.sqrt(disc)
            roots.extend([(-b - sq) / a, (-b + sq) / a])
    pos = [t for t in roots if t > 0]
    t = min(pos) if pos else math.inf
    if d[0] < 0:
        t = min(t, -x[0] / d[0])
    return t


def _lp_step(x, d):
    neg = d < 0
    return float(np.min(-x[neg] / d[neg])) if np.any(neg) else math.inf


def _soc_det(u):
    r = float(np.linalg.norm(u[1:]))
    return (u[0] - r) * (u[0] + r)


class _NT:
    """Nesterov-Todd scaling for the SOC block."""

    def __init__(self, s, z):
        J = np.ones_like(s)
        J[1:] = -1.0
        ss = _soc_det(s)
        zz = _soc_det(z)
        if not (ss > 0 and zz > 0):
            raise FloatingPointError("iterate left the cone interior")
        sb = s / math.sqrt(ss)
        zb = z / math.sqrt(zz)
        gam = math.sqrt((1.0 + zb @ sb) / 2.0)
        self.w = (sb + J * zb) / (2.0 * gam)
        self.beta = (ss / zz) ** 0.25
        self.J = J
        dim = len(s)
        w0, w1 = self.w[0], self.w[1:]
        Wb = np.empty((dim, dim))
        Wb[0, 0] = w0
        Wb[0, 1:] = w1
        Wb[1:, 0] = w1
        Wb[1:, 1:] = np.eye(dim - 1) + np.outer(w1, w1) / (1.0 + w0)
        Wi = Wb.copy()
        Wi[0, 1:] = -w1
        Wi[1:, 0] = -w1
        self.W = self.beta * Wb
        self.Winv = Wi / self.beta
        self.lam = self.W @ z
        self.dim = dim


def _ipm(c, G, h, theta, tol, max_iter):
    """min c.x s.t. G x <= h, ||x[1:]|| <= theta. Returns a dict of iterates."""
    N, m = G.shape
    na = m - 1
    soc = na > 0
    # the ball, scaled by 1/theta: s_q = (1, x[1:]/theta) in Q
    if soc:
        hq = np.zeros(na + 1)
        hq[0] = 1.0

        def Gq_mul(x):
            return np.concatenate([[0.0], -x[1:] / theta])

        def GqT_mul(zq):
            out = np.zeros(m)
            out[1:] = -zq[1:] / theta
            return out

    x = np.zeros(m)
    s_l = np.maximum(h, 0.0) + 1.0
    z_l = np.ones(N)
    if soc:
        s_q = hq.copy()
        z_q = hq.copy()
    deg = N + (1 if soc else 0)
    hnorm = max(1.0, float(np.linalg.norm(h)))
    cnorm = max(1.0, float(np.linalg.norm(c)))
    status = "max_iter"
    it = 0
    stalls = 0
    for it in range(1, max_iter + 1):
        r_x = c + G.T @ z_l + (GqT_mul(z_q) if soc else 0.0)
        r_l = G @ x + s_l - h
        r_q = Gq_mul(x) + s_q - hq if soc else None
        gap = s_l @ z_l + (s_q @ z_q if soc else 0.0)
        pobj = c @ x
        pres = math.sqrt(r_l @ r_l + (r_q @ r_q if soc else 0.0)) / hnorm
        dres = float(np.linalg.norm(r_x)) / cnorm
        if pres <= tol and dres <= tol and gap <= tol * max(1.0, abs(pobj)):
            status = "optimal"
            break
        mu = gap / deg

        d2inv_l = z_l / s_l
        lam_l = np.sqrt(s_l * z_l)
        H = G.T @ (d2inv_l[:, None] * G)
        if soc:
            try:
                nt = _NT(s_q, z_q)
            except FloatingPointError:
                status = "stalled"
                break
            Wq_inv2 = nt.Winv @ nt.Winv
            H[1:, 1:] += Wq_inv2[1:, 1:] / theta**2
        try:
            chol = scipy.linalg.cho_factor(H, lower=True, check_finite=False)

            def hsolve(b):
                return scipy.linalg.cho_solve(chol, b, check_finite=False)

        except np.linalg.LinAlgError:
            Hr = H + 1e-12 * max(1.0, np.trace(H) / m) * np.eye(m)

            def hsolve(b):
                return np.linalg.lstsq(Hr, b, rcond=None)[0]

        def newton(rc_l, rc_q):
            # bz = -r_z - W (lam \ r_c)
            u_l = rc_l / lam_l
            bz_l = -r_l - np.sqrt(s_l / z_l) * u_l
            if soc:
                u_q = _soc_div(nt.lam, rc_q)
                bz_q = -r_q - nt.W @ u_q
            bx = -r_x
            rhs = bx + G.T @ (d2inv_l * bz_l)
            if soc:
                rhs = rhs + GqT_mul(Wq_inv2 @ bz_q)
            dx = hsolve(rhs)
            # one step of iterative refinement
            res = rhs - H @ dx
            dx = dx + hsolve(res)
            dz_l = d2inv_l * (G @ dx - bz_l)
            # ds from the linearized primal equation, which stays accurate
            # when the scaling is badly conditioned near the cone boundary
            Gdx = G @ dx
            ds_l = -r_l - Gdx
            if soc:
                dz_q = Wq_inv2 @ (Gq_mul(dx) - bz_q)
                ds_q = -r_q - Gq_mul(dx)
                return dx, ds_l, dz_l, ds_q, dz_q
            return dx, ds_l, dz_l, None, None

        def max_step(ds_l, dz_l, ds_q, dz_q):
            t = min(_lp_step(s_l, ds_l), _lp_step(z_l, dz_l))
            if soc:
                t = min(t, _soc_step(s_q, ds_q), _soc_step(z_q, dz_q))
            return t

        # predictor
        rc_l = -lam_l * lam_l
        rc_q = -_soc_prod(nt.lam, nt.lam) if soc else None
        dx_a, ds_la, dz_la, ds_qa, dz_qa = newton(rc_l, rc_q)
        ta = min(1.0, max_step(ds_la, dz_la, ds_qa, dz_qa))
        gap_a = (s_l + ta * ds_la) @ (z_l + ta * dz_la)
        if soc:
            gap_a += (s_q + ta * ds_qa) @ (z_q + ta * dz_qa)
        sigma = min(1.0, max(0.0, gap_a / gap)) ** 3
        # corrector
        sw_l = ds_la / np.sqrt(s_l / z_l)
        zw_l = np.sqrt(s_l / z_l) * dz_la
        rc_l = -lam_l * lam_l - sw_l * zw_l + sigma * mu
        if soc:
            e = np.zeros(na + 1)
            e[0] = 1.0
            rc_q = -_soc_prod(nt.lam, nt.lam) - _soc_prod(nt.Winv @ ds_qa, nt.W @ dz_qa) + sigma * mu * e
        dx, ds_l, dz_l, ds_q, dz_q = newton(rc_l, rc_q)
        t = min(1.0, 0.99 * max_step(ds_l, dz_l, ds_q, dz_q))
        if not np.isfinite(t) or t < 1e-12:
            stalls += 1
            if stalls > 3:
                status = "stalled"
                break
            continue
        x = x + t * dx
        s_l = s_l + t * ds_l
        z_l = z_l + t * dz_l
        if soc:
            s_q = s_q + t * ds_q
            z_q = z_q + t * dz_q
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z_l))):
            status = "nonfinite"
            break
    return {
        "x": x,
        "z_l": z_l,
        "z_q": z_q if soc else None,
        "iterations": it,
        "status": status,
    }


def _finish(program, x, z_l, ball_mult, iterations, method, tol, status="optimal"):
    G, h, obj, theta = program.constraint_matrix, program.rhs, program.objective_vector, program.theta_P
    alpha = x[1:]
    c = -obj
    # dual feasibility of min c.x with multipliers z >= 0 on G x <= h and
    # the ball term; stationarity ignores the ball here since its multiplier
    # direction is alpha/||alpha||
    grad = c + G.T @ z_l
    anorm = float(np.linalg.norm(alpha))
    if anorm > 0:
        grad[1:] += ball_mult * alpha / anorm
    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
    viol = float(np.max(G @ x - h)) if len(h) else 0.0
    feas = max(0.0, viol, anorm - theta if program.n else 0.0)
    comp_l = np.abs(z_l * (h - G @ x))
    comp = float(comp_l.sum()) + (abs(ball_mult * (theta - anorm)) if program.n else 0.0)
    primal = float(obj @ x)
    dual = float(h @ z_l + (ball_mult * theta if program.n else 0.0))
    converged = status == "optimal"
    flags = [] if converged else [status]
    sol = ScenarioSolution(
        rho_star=float(x[0]),
        alpha_star=alpha.copy(),
        objective=primal,
        dual_objective=dual,
        dual_multipliers=z_l,
        ball_multiplier=float(ball_mult),
        kkt_residuals=(stationarity, feas, comp),
        iterations=iterations,
        method=method,
        cap_active=bool(theta >= INF_CAP and anorm >= theta * (1 - 1e-6)),
        ball_active=bool(program.n and anorm >= theta * (1 - 1e-6)),
        converged=converged,
        flags=flags,
    )
    if program.n and program.criterion == "ac" and abs(z_l.sum() - 1.0) > 1e-6:
        sol.flags.append("dual_mass")
    return sol


def _kkt_newton(program, x, J, y, on_ball, mu):
    """Newton's method on the equality KKT system of the active set J (and the sphere)."""
    G, h, obj, theta = program.constraint_matrix, program.rhs, program.objective_vector, program.theta_P
    GJ, hJ = G[J], h[J]
    m, nj = G.shape[1], len(J)
    # the sphere is written as (||alpha||^2 - theta^2) / (2 theta) = 0, with
    # gradient (0, alpha/theta) and multiplier mu
    mask = np.ones(m)
    mask[0] = 0.0
    size = m + nj + (1 if on_ball else 0)
    for _ in range(30):
        grad_b = mask * x / theta
        F = np.empty(size)
        F[:m] = GJ.T @ y - obj + (mu * grad_b if on_ball else 0.0)
        F[m : m + nj] = GJ @ x - hJ
        if on_ball:
            F[-1] = (x[1:] @ x[1:] - theta * theta) / (2.0 * theta)
        if np.max(np.abs(F)) <= 1e-15 * max(1.0, float(np.max(np.abs(hJ), initial=0.0))):
            break
        K = np.zeros((size, size))
        K[:m, m : m + nj] = GJ.T
        K[m : m + nj, :m] = GJ
        if on_ball:
            K[:m, :m] = np.diag(mu * mask / theta)
            K[:m, -1] = grad_b
            K[-1, :m] = grad_b
        step = np.linalg.lstsq(K, -F, rcond=None)[0]
        x = x + step[:m]
        y = y + step[m : m + nj]
        if on_ball:
            mu = mu + step[-1]
    return x, y, mu


def _polish(program, x, z_l, ball):
    """Active-set refinement of an interior-point iterate.

    The active set is seeded from the rows with non-negligible multipliers
    (several thresholds are tried) and the sphere when its multiplier is
    non-negligible. Newton's method solves the equality KKT system; rows with
    negative multipliers are dropped and the most violated row is added until
    the point is primal and dual feasible. Returns the best candidate found,
    as (x, z, ball multiplier), or None.
    """
    G, h, theta = program.constraint_matrix, program.rhs, program.theta_P
    scale = max(float(np.max(z_l)) if z_l.size else 0.0, ball, 1e-300)
    on_ball = program.n > 0 and ball > 1e-6 * scale
    hscale = max(1.0, float(np.max(np.abs(h))))
    best, best_err = None, math.inf
    seen = set()
    for thr in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7):
        J = [int(j) for j in np.flatnonzero(z_l > thr * scale)]
        for _ in range(20):
            key = tuple(sorted(J))
            if key in seen:
                break
            seen.add(key)
            y0 = z_l[J].copy()
            xs, y, mu = _kkt_newton(program, x.copy(), J, y0, on_ball, float(ball) if on_ball else 0.0)
            if not np.all(np.isfinite(xs)):
                break
            if len(y) and np.min(y) < -1e-12:
                del J[int(np.argmin(y))]
                continue
            if mu < -1e-12:
                break
            viol = G @ xs - h
            worst = int(np.argmax(viol))
            if viol[worst] > 1e-12 * hscale:
                J.append(worst)
                continue
            z = np.zeros_like(z_l)
            z[J] = np.maximum(y, 0.0)
            b = max(mu, 0.0) * float(np.linalg.norm(xs[1:])) / theta if on_ball else 0.0
            sol = _finish(program, xs, z, b, 0, "ipm", 0.0)
            err = max(sol.kkt_residuals) + sol.gap
            if err < best_err:
                best, best_err = (xs, z, b), err
            break
        if best is not None and best_err < 1e-12:
            break
    return best


def solve(program: ScenarioProgram, tolerance: float = 1e-8, max_iter: int = 100, method: str = "ipm", raise_on_failure: bool = True) -> ScenarioSolution:
    """Solve the scenario program; ``method`` is 'ipm' (default) or 'cutting-plane'.

    When the interior-point path stalls the cutting-plane route takes over.
    """
    if program.N < 1:
        raise ConfigError("program has no constraints")
    if not tolerance > 0:
        raise ConfigError("tolerance must be positive")
    if method == "cutting-plane":
        return solve_cutting_plane(program, tolerance)
    if method != "ipm":
        raise ConfigError(f"unknown method {method!r}")
    G, h = program.constraint_matrix, program.rhs
    c = -program.objective_vector
    # scale rows so every constraint has unit infinity norm; multipliers are
    # mapped back afterwards
    rs = 1.0 / np.maximum(np.max(np.abs(G), axis=1), 1e-300)
    out = _ipm(c, G * rs[:, None], h * rs, program.theta_P, tolerance, max_iter)
    z_l = out["z_l"] * rs
    # z_q lives on the scaled cone (1, alpha/theta); the ball multiplier is
    # the norm of its vector part divided by theta
    ball = float(np.linalg.norm(out["z_q"][1:])) / program.theta_P if out["z_q"] is not None else 0.0
    sol = _finish(program, out["x"], z_l, ball, out["iterations"], "ipm", tolerance, out["status"])
    if out["status"] in ("optimal", "stalled", "max_iter"):
        pol = _polish(program, out["x"], z_l, ball)
        if pol is not None:
            cand = _finish(program, *pol, out["iterations"], "ipm", tolerance)
            if max(cand.kkt_residuals) + cand.gap <= max(sol.kkt_residuals) + sol.gap:
                sol = cand
            elif out["status"] != "optimal" and max(sol.kkt_residuals) + sol.gap <= tolerance:
                sol.converged, sol.flags = True, []
    if not sol.converged or max(sol.kkt_residuals) > tolerance or sol.gap > 10 * tolerance:
        try:
            alt = solve_cutting_plane(program, tolerance)
            alt.flags.append(f"ipm_{out['status']}")
            return alt
        except MaxIterations:
            if raise_on_failure:
                raise MaxIterations(f"interior-point status {out['status']}", sol)
    return sol


def _pull_onto_ball(program, x):
    """Scale alpha onto the ball and lower rho until every sampled row holds."""
    G, h, theta = program.constraint_matrix, program.rhs, program.theta_P
    x = x.copy()
    anorm = float(np.linalg.norm(x[1:]))
    if program.n and anorm > theta:
        x[1:] *= theta / anorm
        x[0] = min(x[0], float(np.min((h - G[:, 1:] @ x[1:]) / G[:, 0])))
    return x


def solve_cutting_plane(program: ScenarioProgram, tolerance: float = 1e-8, max_cuts: int = 2000) -> ScenarioSolution:
    """Outer polyhedral approximation of the ball, refined by tangent cuts.

    Each LP is solved with HiGHS. The LP value bounds the optimum from above
    and the iterate pulled onto the ball bounds it from below; the loop stops
    once the iterate is inside the ball or the two bounds meet.
    """
    G, h, obj, theta = program.constraint_matrix, program.rhs, program.objective_vector, program.theta_P
    n = program.n
    bounds_list = [(None, None)] + [(-theta, theta)] * n
    cuts = []
    res = None
    for it in range(max_cuts):
        A = G if not cuts else np.vstack([G, np.array(cuts)])
        b = h if not cuts else np.concatenate([h, np.full(len(cuts), theta)])
        res = linprog(-obj, A_ub=A, b_ub=b, bounds=bounds_list, method="highs")
        if res.status == 2:
            raise Infeasible("scenario program is infeasible")
        if res.status != 0:
            raise MaxIterations(f"HiGHS status {res.status}: {res.message}")
        x = res.x
        anorm = float(np.linalg.norm(x[1:]))
        if n == 0 or anorm <= theta * (1 + tolerance):
            break
        upper = float(obj @ x)
        if upper - float(obj @ _pull_onto_ball(program, x)) <= tolerance * max(1.0, abs(upper)):
            break
        if it % 5 == 4:
            # tangent cuts alone converge slowly once the sphere is active;
            # the LP active set usually suffices for the Newton polish
            z_l, ball = _cut_multipliers(program, res, cuts)
            pol = _polish(program, x, z_l, max(ball, 1e-300))
            if pol is not None:
                sol = _finish(program, *pol, it + 1, "cutting-plane", tolerance)
                if max(sol.kkt_residuals) <= tolerance and sol.gap <= 10 * tolerance:
                    return sol
        cuts.append(np.concatenate([[0.0], x[1:] / anorm]))
    else:
        raise MaxIterations("cutting-plane limit reached")
    z_l, ball = _cut_multipliers(program, res, cuts)
    return _finish(program, _pull_onto_ball(program, res.x), z_l, ball, it + 1, "cutting-plane", tolerance)


def _cut_multipliers(program, res, cuts):
    """Row multipliers and the ball multiplier aggregated from the tangent cuts."""
    marg = -np.asarray(res.ineqlin.marginals)
    ball = 0.0
    if cuts:
        zc = marg[program.N : program.N + len(cuts)]
        ball = float(np.linalg.norm(np.array(cuts)[:, 1:].T @ zc))
    return marg[: program.N], ball


@dataclass
class Certificate:
    value: float
    theta_D: float
    alpha_norm: float
    epsilon: float
    beta: float
    N_needed: int
    meets_sample_size: bool


def posterior_certificate(solution: ScenarioSolution, program: ScenarioProgram, model: ControlModel, basis: BasisSet, epsilon: float, beta: float) -> Certificate:
    """theta_D h(alpha*_N, eps), and whether N reaches N(n+1, eps, beta)."""
    crit = model.criterion
    theta_D = bounds.dual_bound(crit, program.theta_P, model.cost_sup_norm, model.cost_lip_norm)
    anorm = min(solution.alpha_norm, program.theta_P)
    value = theta_D * bounds.tail_bound(model, basis, program.theta_P, anorm, epsilon)
    needed = bounds.sample_size(program.n + 1, epsilon, beta) if 0 < epsilon < 1 else 1
    return Certificate(value, theta_D, anorm, epsilon, beta, needed, program.N >= needed)
