"""Markov control models on the unit box.

A ``ControlModel`` lives on K = [0,1]^(dim_s + dim_a). Its transition kernel
is given by a density with respect to Lebesgue measure on the state box, and
kernel expectations Qu(s,a) are computed with piecewise Gauss-Legendre
quadrature. Every callable is vectorized over points:

* ``kernel_density(y, s, a)`` takes ``y`` of shape (P, M, dim_s) and ``s``,
  ``a`` of shapes (P, dim_s), (P, dim_a); it returns (P, M).
* ``stage_cost(s, a)`` returns shape (P,).
* ``breakpoints(s, a)`` (optional) returns one (P, B) array per state axis
  with the per-point locations where the density is not smooth.
* ``support(s, a)`` (optional) returns (lo, hi), each (P, dim_s); the density
  is zero outside.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateBox, NonFiniteBounds, QuadratureDivergence


@dataclass(frozen=True)
class AverageCost:
    tag = "ac"


@dataclass(frozen=True)
class Discounted:
    tau: float
    tag = "dc"

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"discount factor must lie in (0,1), got {self.tau}")


Criterion = AverageCost | Discounted


@dataclass(frozen=True)
class QuadratureSpec:
    family: str = "gauss-legendre"
    nodes_per_dim: int = 64
    # static kinks per state axis, in unit coordinates
    split_points: tuple = ()
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.family != "gauss-legendre":
            raise ConfigError(f"unknown quadrature family {self.family!r}")
        if self.nodes_per_dim < 2:
            raise ConfigError("nodes_per_dim must be at least 2")
        if not self.tolerance > 0:
            raise ConfigError("quadrature tolerance must be positive")
        for axis in self.split_points:
            for p in axis:
                if not 0.0 <= p <= 1.0:
                    raise ConfigError(f"split point {p} outside [0,1]")


@dataclass(frozen=True)
class ControlModel:
    dim_s: int
    dim_a: int
    kernel_density: Callable
    stage_cost: Callable
    lipschitz_kernel: float
    cost_sup_norm: float
    cost_lip_norm: float
    criterion: Criterion = AverageCost()
    quadrature: QuadratureSpec = QuadratureSpec()
    breakpoints: Optional[Callable] = None
    support: Optional[Callable] = None
    name: str = "custom"
    # raw box of the original coordinates, length dim_K each
    box_lo: tuple = ()
    box_hi: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def dim_K(self) -> int:
        return self.dim_s + self.dim_a

    def with_criterion(self, criterion) -> "ControlModel":
        return replace(self, criterion=criterion)

    def with_quadrature(self, quadrature: QuadratureSpec) -> "ControlModel":
        return replace(self, quadrature=quadrature)

    def to_raw(self, s, a):
        """Map unit-box points back to the original coordinates."""
        s, a = as_points(s, self.dim_s), as_points(a, self.dim_a)
        if not self.box_lo:
            return s, a
        lo = np.asarray(self.box_lo, float)
        width = np.asarray(self.box_hi, float) - lo
        k = np.hstack([s, a]) * width + lo
        return k[:, : self.dim_s], k[:, self.dim_s :]


def as_points(x, dim: int) -> np.ndarray:
    """Coerce scalars, 1-D arrays or (P, dim) arrays to shape (P, dim)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1) if dim == 1 else np.full((1, dim), float(x))
    if x.ndim == 1:
        return x.reshape(-1, 1) if dim == 1 else x.reshape(1, dim)
    if x.shape[-1] != dim:
        raise ConfigError(f"expected trailing dimension {dim}, got {x.shape}")
    return x


@lru_cache(maxsize=32)
def gauss_legendre_unit(m: int):
    """Nodes and weights on [0,1]."""
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _axis_rule(lo, hi, breaks, m):
    """Piecewise rule on [lo, hi] split at ``breaks``; all arrays per point."""
    P = lo.shape[0]
    inner = np.clip(breaks, lo[:, None], hi[:, None]) if breaks.size else np.empty((P, 0))
    edges = np.sort(np.hstack([lo[:, None], inner, hi[:, None]]), axis=1)
    left, width = edges[:, :-1], np.diff(edges, axis=1)
    x, w = gauss_legendre_unit(m)
    nodes = (left[:, :, None] + width[:, :, None] * x).reshape(P, -1)
    weights = (width[:, :, None] * w).reshape(P, -1)
    return nodes, weights


def kernel_nodes(model: ControlModel, s, a):
    """Quadrature nodes ``y`` (P, M, dim_s) and density-weighted weights (P, M)."""
    s, a = as_points(s, model.dim_s), as_points(a, model.dim_a)
    P = s.shape[0]
    if model.support is not None:
        lo, hi = model.support(s, a)
        lo = np.clip(np.asarray(lo, float).reshape(P, model.dim_s), 0.0, 1.0)
        hi = np.clip(np.asarray(hi, float).reshape(P, model.dim_s), 0.0, 1.0)
    else:
        lo, hi = np.zeros((P, model.dim_s)), np.ones((P, model.dim_s))
    dynamic = model.breakpoints(s, a) if model.breakpoints is not None else None
    static = model.quadrature.split_points
    m = model.quadrature.nodes_per_dim

    axis_nodes, axis_weights = [], []
    for d in range(model.dim_s):
        parts = []
        if d < len(static) and len(static[d]):
            parts.append(np.broadcast_to(np.asarray(static[d], float), (P, len(static[d]))))
        if dynamic is not None:
            parts.append(np.asarray(dynamic[d], float).reshape(P, -1))
        breaks = np.hstack(parts) if parts else np.empty((P, 0))
        n_d, w_d = _axis_rule(lo[:, d], hi[:, d], breaks, m)
        axis_nodes.append(n_d)
        axis_weights.append(w_d)

    if model.dim_s == 1:
        y = axis_nodes[0][:, :, None]
        w = axis_weights[0]
    else:
        grids = np.meshgrid(*[np.arange(n.shape[1]) for n in axis_nodes], indexing="ij")
        idx = [g.ravel() for g in grids]
        y = np.stack([axis_nodes[d][:, idx[d]] for d in range(model.dim_s)], axis=-1)
        w = np.prod([axis_weights[d][:, idx[d]] for d in range(model.dim_s)], axis=0)
    dens = np.asarray(model.kernel_density(y, s, a), float)
    return y, w * dens


def _check_mass(model, mass):
    err = np.max(np.abs(mass - 1.0)) if mass.size else 0.0
    if not np.isfinite(err) or err > 100.0 * model.quadrature.tolerance:
        raise QuadratureDivergence(
            f"kernel density integrates to 1 +/- {err:.3g}, beyond 100x tolerance "
            f"{model.quadrature.tolerance:g}"
        )


def kernel_expectation(model: ControlModel, u: Callable, s, a, check: bool = True):
    """Qu(s,a) for a vectorized ``u`` mapping (..., dim_s) to (...).

    Returns an array of shape (P,) or a float for a single point.
    """
    single = np.ndim(s) == 0 or (np.ndim(s) == 1 and model.dim_s > 1)
    y, wq = kernel_nodes(model, s, a)
    if check:
        _check_mass(model, wq.sum(axis=1))
    vals = (wq * np.asarray(u(y), float)).sum(axis=1)
    return float(vals[0]) if single else vals


def kernel_mass(model: ControlModel, s, a) -> np.ndarray:
    _, wq = kernel_nodes(model, s, a)
    return wq.sum(axis=1)


@dataclass(frozen=True)
class RawModel:
    """A model in its original coordinates on the box [lo, hi].

    ``lipschitz_kernel`` and ``cost_lipschitz`` are slopes with respect to the
    l-infinity norm of the raw coordinates.
    """

    dim_s: int
    dim_a: int
    kernel_density: Callable
    stage_cost: Callable
    lipschitz_kernel: float
    cost_sup_norm: float
    cost_lipschitz: float
    criterion: Criterion = AverageCost()
    quadrature: QuadratureSpec = QuadratureSpec()
    breakpoints: Optional[Callable] = None
    support: Optional[Callable] = None
    name: str = "custom"


def to_unit_box(
    lo: Sequence[float],
    hi: Sequence[float],
    raw: RawModel,
    lipschitz_kernel: Optional[float] = None,
    cost_lip_norm: Optional[float] = None,
    metadata: Optional[dict] = None,
) -> ControlModel:
    """Affine change of coordinates from [lo, hi] to the unit box.

    The kernel density picks up the Jacobian of the state map, so it stays a
    probability density. Explicit Lipschitz constants (already in unit-box
    coordinates) override the rescaled raw ones.
    """
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    dk = raw.dim_s + raw.dim_a
    if lo.shape != (dk,) or hi.shape != (dk,):
        raise ConfigError(f"box bounds must have length {dk}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise NonFiniteBounds("box bounds must be finite")
    width = hi - lo
    if np.any(width == 0):
        raise DegenerateBox("box has a zero-width side")
    if np.any(width < 0):
        raise ConfigError("box requires lo < hi componentwise")

    ds = raw.dim_s
    s_lo, s_w = lo[:ds], width[:ds]
    a_lo, a_w = lo[ds:], width[ds:]
    jac = float(np.prod(s_w))

    def density(y, s, a):
        return raw.kernel_density(s_lo + s_w * y, s_lo + s_w * s, a_lo + a_w * a) * jac

    def cost(s, a):
        return raw.stage_cost(s_lo + s_w * s, a_lo + a_w * a)

    breakpoints = support = None
    if raw.breakpoints is not None:

        def breakpoints(s, a):
            br = raw.breakpoints(s_lo + s_w * s, a_lo + a_w * a)
            return [(np.asarray(br[d]) - s_lo[d]) / s_w[d] for d in range(ds)]

    if raw.support is not None:

        def support(s, a):
            l, h = raw.support(s_lo + s_w * s, a_lo + a_w * a)
            return (np.asarray(l) - s_lo) / s_w, (np.asarray(h) - s_lo) / s_w

    scale = float(np.max(width))
    lq = raw.lipschitz_kernel * scale if lipschitz_kernel is None else lipschitz_kernel
    lpsi = (
        max(raw.cost_sup_norm, raw.cost_lipschitz * scale)
        if cost_lip_norm is None
        else cost_lip_norm
    )
    return ControlModel(
        dim_s=ds,
        dim_a=raw.dim_a,
        kernel_density=density,
        stage_cost=cost,
        lipschitz_kernel=float(lq),
        cost_sup_norm=float(raw.cost_sup_norm),
        cost_lip_norm=float(lpsi),
        criterion=raw.criterion,
        quadrature=raw.quadrature,
        breakpoints=breakpoints,
        support=support,
        name=raw.name,
        box_lo=tuple(lo),
        box_hi=tuple(hi),
        metadata=dict(metadata or {}),
    )


@dataclass
class ValidationReport:
    probe_count: int
    max_mass_error: float
    min_cost: float
    lipschitz_quotient: float
    lipschitz_kernel: float
    flags: list

    @property
    def ok(self) -> bool:
        return not self.flags

    def to_dict(self) -> dict:
        return {
            "probe_count": self.probe_count,
            "max_mass_error": self.max_mass_error,
            "min_cost": self.min_cost,
            "lipschitz_quotient": self.lipschitz_quotient,
            "lipschitz_kernel": self.lipschitz_kernel,
            "flags": list(self.flags),
        }


def _probe(y):
    return np.prod(np.cos(np.pi * y), axis=-1)


def validate_model(model: ControlModel, probe_count: int = 100, seed=0, step: float = 1e-3):
    """Probe the standing assumptions at random state-action pairs.

    The kernel Lipschitz quotient uses the probe u(y) = prod cos(pi y_i), which
    has sup norm 1, with finite differences of size ``step`` in random sign
    directions.
    """
    if probe_count < 1:
        raise ConfigError("probe_count must be at least 1")
    rng = np.random.default_rng(seed)
    k = rng.uniform(0.0, 1.0, size=(probe_count, model.dim_K))
    s, a = k[:, : model.dim_s], k[:, model.dim_s :]
    mass = kernel_mass(model, s, a)
    max_mass_error = float(np.max(np.abs(mass - 1.0)))
    min_cost = float(np.min(model.stage_cost(s, a)))

    direction = rng.choice([-1.0, 1.0], size=k.shape)
    k2 = k + step * direction
    k2 = np.where((k2 < 0) | (k2 > 1), k - step * direction, k2)
    dist = np.max(np.abs(k2 - k), axis=1)
    q1 = kernel_expectation(model, _probe, s, a, check=False)
    q2 = kernel_expectation(model, _probe, k2[:, : model.dim_s], k2[:, model.dim_s :], check=False)
    quotient = float(np.max(np.abs(q1 - q2) / dist))

    flags = []
    if max_mass_error > model.quadrature.tolerance:
        flags.append("kernel_mass")
    if min_cost < 0:
        flags.append("negative_cost")
    if quotient > model.lipschitz_kernel * (1.0 + 1e-9):
        flags.append("kernel_lipschitz")
    return ValidationReport(
        probe_count, max_mass_error, min_cost, quotient, model.lipschitz_kernel, flags
    )
