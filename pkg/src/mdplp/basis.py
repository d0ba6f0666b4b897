"""Finite bases for the value-function subspace and cached kernel expectations."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, QuadratureDivergence, UnsupportedDimension
from .model import ControlModel, as_points, kernel_nodes

LIPSCHITZ_RESOLUTION = 4096
# largest grid used for numerical normalization, summed over all axes
GRID_BUDGET = 1 << 22
QU_CHUNK = 2048


def estimate_lipschitz_norm(u: Callable, grid_resolution: int = LIPSCHITZ_RESOLUTION, dim: int = 1) -> float:
    """Grid estimate of max(sup |u|, sup |u(s) - u(s')| / ||s - s'||_inf).

    Difference quotients are taken between adjacent nodes along each axis, so
    the value is a lower estimate that converges as the resolution grows.
    """
    if grid_resolution < 2:
        raise ConfigError("grid_resolution must be at least 2")
    if grid_resolution**dim > GRID_BUDGET:
        raise UnsupportedDimension(f"grid {grid_resolution}^{dim} exceeds budget {GRID_BUDGET}")
    axis = np.linspace(0.0, 1.0, grid_resolution)
    h = axis[1] - axis[0]
    mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1)
    vals = np.asarray(u(mesh), float).reshape((grid_resolution,) * dim)
    best = float(np.max(np.abs(vals)))
    for d in range(dim):
        best = max(best, float(np.max(np.abs(np.diff(vals, axis=d)))) / h)
    return best


def _fourier_terms(n: int, dim: int, budget: int):
    """(frequency vector, trig pattern) pairs ordered by total frequency, then lexicographically."""
    terms = []
    total = 1
    while len(terms) < n:
        for k in itertools.product(range(total + 1), repeat=dim):
            if sum(k) != total:
                continue
            nz = [j for j in range(dim) if k[j] > 0]
            for pattern in itertools.product((0, 1), repeat=len(nz)):
                trig = [0] * dim
                for j, t in zip(nz, pattern):
                    trig[j] = t
                terms.append((k, tuple(trig)))
                if len(terms) > budget:
                    raise UnsupportedDimension(f"tensor Fourier enumeration exceeds budget {budget}")
        total += 1
    return terms[:n]


def _trig_term(k, trig):
    k = np.asarray(k, float)

    def f(y):
        y = np.asarray(y, float)
        arg = np.pi * k * (2.0 * y - 1.0)
        parts = np.where(np.asarray(trig) == 1, np.sin(arg), np.cos(arg))
        return np.prod(parts, axis=-1)

    return f


@dataclass
class BasisSet:
    n: int
    dim_s: int
    evaluators: list
    lip_norms: list
    scales: list
    family: str = "custom"
    norm_kind: str = "l2"
    terms: Optional[list] = None
    raw_evaluators: Optional[list] = None
    qu_cache: dict = field(default_factory=dict, repr=False, compare=False)
    cache_capacity: int = 200_000
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def rho_n(self) -> float:
        return float(np.sqrt(self.n))

    def evaluate(self, y) -> np.ndarray:
        """All basis functions at ``y`` (..., dim_s); returns (..., n)."""
        return np.moveaxis(self.evaluate_stacked(y), 0, -1)

    def evaluate_stacked(self, y) -> np.ndarray:
        """Function-major evaluation at ``y`` (..., dim_s); returns (n, ...)."""
        y = np.asarray(y, float)
        if self.n == 0:
            return np.zeros((0,) + y.shape[:-1])
        if self.family == "fourier" and self.dim_s == 1:
            return self._fourier_1d(y[..., 0])
        return np.stack([np.asarray(f(y), float) for f in self.evaluators], axis=0)

    def _fourier_1d(self, x):
        # angle-addition recurrence for cos(k t), sin(k t)
        kmax = (self.n + 1) // 2
        t = np.pi * (2.0 * x - 1.0)
        c1, s1 = np.cos(t), np.sin(t)
        out = np.empty((self.n,) + x.shape)
        c, s = c1, s1
        for k in range(kmax):
            np.multiply(c, self.scales[2 * k], out=out[2 * k])
            if 2 * k + 1 < self.n:
                np.multiply(s, self.scales[2 * k + 1], out=out[2 * k + 1])
            if k + 1 < kmax:
                c, s = c * c1 - s * s1, s * c1 + c * s1
        return out

    def with_function(self, i: int, f: Callable) -> "BasisSet":
        """Copy with entry ``i`` replaced by ``f`` (a test hook); the cache starts empty."""
        evals = list(self.evaluators)
        evals[i] = f
        return replace(
            self,
            evaluators=evals,
            family="custom",
            qu_cache={},
            _lock=threading.Lock(),
        )

    def descriptor(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "dim_s": self.dim_s,
            "scales": [float(c) for c in self.scales],
            "terms": [[list(k), list(t)] for k, t in (self.terms or [])],
        }


def basis_from_functions(functions, dim_s: int = 1, normalize: bool = True, resolution: int = LIPSCHITZ_RESOLUTION) -> BasisSet:
    evals, lips, scales = [], [], []
    res = resolution if dim_s == 1 else max(2, int(GRID_BUDGET ** (1.0 / dim_s)))
    for f in functions:
        c = 1.0
        if normalize:
            c = 1.0 / estimate_lipschitz_norm(f, res, dim_s)
        g = (lambda f, c: (lambda y: c * np.asarray(f(y), float)))(f, c)
        evals.append(g)
        scales.append(c)
        lips.append(estimate_lipschitz_norm(g, res, dim_s))
    return BasisSet(n=len(evals), dim_s=dim_s, evaluators=evals, lip_norms=lips, scales=scales)


def empty_basis(dim_s: int = 1) -> BasisSet:
    return BasisSet(n=0, dim_s=dim_s, evaluators=[], lip_norms=[], scales=[], family="empty")


def fourier_basis(model: ControlModel, n: int, budget: int = 100_000) -> BasisSet:
    """Cosine/sine pairs of increasing frequency on the unit state box.

    The constant function is left out because the scalar rho spans it. Raw
    terms are cos(k pi (2 s - 1)) and sin(k pi (2 s - 1)); each is rescaled so
    its grid-estimated Lipschitz norm is 1.
    """
    if n < 1:
        raise ConfigError("basis size n must be at least 1")
    terms = _fourier_terms(n, model.dim_s, budget)
    raw = [_trig_term(k, t) for k, t in terms]
    out = basis_from_functions(raw, model.dim_s)
    out.family = "fourier"
    out.terms = terms
    out.raw_evaluators = raw
    return out


def _model_key(model: ControlModel):
    q = model.quadrature
    params = model.metadata.get("params")
    return (
        model.name,
        q.nodes_per_dim,
        q.split_points,
        q.tolerance,
        repr(sorted(params.items())) if isinstance(params, dict) else None,
        repr(model.criterion),
    )


def qu_uncached(model: ControlModel, basis: BasisSet, s, a) -> np.ndarray:
    """Qu_i(s_j, a_j) as an (n, P) array, by fresh quadrature."""
    s, a = as_points(s, model.dim_s), as_points(a, model.dim_a)
    P = s.shape[0]
    out = np.empty((basis.n, P))
    for start in range(0, P, QU_CHUNK):
        sl = slice(start, min(P, start + QU_CHUNK))
        y, wq = kernel_nodes(model, s[sl], a[sl])
        mass = wq.sum(axis=1)
        err = np.max(np.abs(mass - 1.0)) if mass.size else 0.0
        if not np.isfinite(err) or err > 100.0 * model.quadrature.tolerance:
            raise QuadratureDivergence(f"kernel mass off by {err:.3g}")
        vals = basis.evaluate_stacked(y)
        out[:, sl] = np.einsum("pm,ipm->ip", wq, vals)
    return out


def qu_values(model: ControlModel, basis: BasisSet, points, use_cache: bool = True) -> np.ndarray:
    """Qu_i at each state-action point; ``points`` is (P, dim_K). Returns (n, P).

    Values are memoized per (model, point) in ``basis.qu_cache`` until the
    cache reaches its capacity; later points are computed but not stored.
    """
    points = np.ascontiguousarray(np.asarray(points, float).reshape(-1, model.dim_K))
    ds = model.dim_s
    if not use_cache or basis.n == 0:
        return qu_uncached(model, basis, points[:, :ds], points[:, ds:])
    mkey = _model_key(model)
    keys = [(mkey, row.tobytes()) for row in points]
    out = np.empty((basis.n, points.shape[0]))
    missing = []
    cache = basis.qu_cache
    for j, key in enumerate(keys):
        hit = cache.get(key)
        if hit is None:
            missing.append(j)
        else:
            out[:, j] = hit
    if missing:
        idx = np.asarray(missing)
        fresh = qu_uncached(model, basis, points[idx, :ds], points[idx, ds:])
        out[:, idx] = fresh
        with basis._lock:
            room = basis.cache_capacity - len(cache)
            for col, j in enumerate(missing[: max(room, 0)]):
                cache.setdefault(keys[j], fresh[:, col].copy())
    return out
