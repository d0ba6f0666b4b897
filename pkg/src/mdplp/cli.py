"""Experiment harness: scenario sweeps, smoothing traces, bound reports, model checks.

Subcommands and their outputs:

scenario-sweep
    CSV columns N, trials, failures, mean, min, max, q10, q90 (one row per N).
    With --per-trial a second CSV lists trial, seed_entropy, N, objective, alpha_norm.
smooth-trace
    CSV columns k, eps_prior, eta, J_LB, J_UB, gap.
bounds
    BoundsReport as JSON on stdout (and in --out if given).
validate-model
    ValidationReport as JSON.

Every run writes ``<out>.manifest.json`` next to the CSV with the full
configuration, seeds, library version and the fisheries cost shift. The
quadrature cache (``--cache-dir``) holds one ``.npz`` file per trial, named
``<hash>-<seed>-<trial>-<Nmax>.npz`` where the hash covers (problem,
parameters, criterion, basis, quadrature settings). Each file has two
arrays: ``points`` (P, dim_K) and ``values`` (n, P), i.e. Qu_i at the sampled
points. A change of any hashed input selects a different file.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__, bounds, scenario, smoothing
from .basis import empty_basis, fourier_basis
from .errors import ConfigError, MdpLpError, NumericalError
from .model import AverageCost, Discounted, QuadratureSpec, validate_model
from .problems import FisheriesParams, LqgParams, fisheries_instance, lqg_instance, report_objective

DEFAULT_N_GRID = (10, 100, 1000, 10000)
DEFAULT_K_GRID = (10, 100, 1000, 10000, 100000)


@dataclass
class RunConfig:
    problem: str = "lqg"
    criterion: str = "ac"
    tau: Optional[float] = None
    n: int = 10
    basis_family: str = "fourier"
    theta_p: str = "paper"
    route: str = "scenario"
    N_grid: tuple = DEFAULT_N_GRID
    k_grid: tuple = DEFAULT_K_GRID
    epsilon: float = 0.1
    beta: float = 0.05
    trials: int = 50
    seed: int = 0
    quad_nodes: int = 64
    grid_nodes: int = smoothing.GRID_NODES
    objective: str = "cost"
    params: dict = field(default_factory=dict)
    D: float = 1.0
    d: Optional[int] = None
    workers: int = 1
    out: Optional[str] = None
    cache_dir: Optional[str] = None
    per_trial: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.n < 0:
            raise ConfigError("n must be nonnegative")
        if self.criterion not in ("ac", "dc"):
            raise ConfigError("criterion must be ac or dc")
        if self.criterion == "dc" and self.tau is None:
            raise ConfigError("--tau is required for the discounted criterion")
        if self.basis_family != "fourier":
            raise ConfigError(f"unknown basis family {self.basis_family!r}")
        if self.route not in ("scenario", "smoothing", "bounds-only"):
            raise ConfigError(f"unknown route {self.route!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.out:
            parent = os.path.dirname(os.path.abspath(self.out))
            if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
                raise ConfigError(f"output directory {parent} is not writable")


def load_problem(config: RunConfig):
    """Model for the configured problem; a path names a JSON file with problem and params."""
    name, params, objective = config.problem, dict(config.params), config.objective
    if name not in ("lqg", "fisheries"):
        try:
            with open(name) as fh:
                spec = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read problem file {name}: {exc}") from None
        name = spec.get("problem")
        params = {**spec.get("params", {}), **params}
        objective = spec.get("objective", objective)
    crit = Discounted(config.tau) if config.criterion == "dc" else AverageCost()
    quad = QuadratureSpec(nodes_per_dim=config.quad_nodes)
    try:
        if name == "lqg":
            return lqg_instance(LqgParams(**params), criterion=crit, quadrature=quad)
        if name == "fisheries":
            model = fisheries_instance(FisheriesParams(**params), objective=objective, quadrature=quad)
            return model.with_criterion(crit)
    except TypeError as exc:
        raise ConfigError(f"bad parameters: {exc}") from None
    raise ConfigError(f"unknown problem {name!r}")


def _theta(model, mode):
    return scenario.resolve_theta(model, mode)


def cache_key(model, basis) -> str:
    from .basis import _model_key

    blob = json.dumps([repr(_model_key(model)), basis.descriptor()], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def _cache_path(model, basis, cache_dir, trial_tag):
    return os.path.join(cache_dir, f"{cache_key(model, basis)}-{trial_tag}.npz")


def load_cache(model, basis, cache_dir, trial_tag) -> int:
    """Fill basis.qu_cache from a saved file; returns the number of points loaded."""
    if not cache_dir:
        return 0
    path = _cache_path(model, basis, cache_dir, trial_tag)
    if not os.path.exists(path):
        return 0
    from .basis import _model_key

    with np.load(path) as data:
        pts, vals = data["points"], data["values"]
    mkey = _model_key(model)
    for j, row in enumerate(np.ascontiguousarray(pts)):
        basis.qu_cache[(mkey, row.tobytes())] = vals[:, j].copy()
    return len(pts)


def save_cache(model, basis, cache_dir, trial_tag, points, values):
    if not cache_dir:
        return
    os.makedirs(cache_dir, exist_ok=True)
    np.savez_compressed(_cache_path(model, basis, cache_dir, trial_tag), points=points, values=values)


def quantiles(values, qs=(0.1, 0.9)):
    """Linear-interpolation quantiles (numpy's default definition)."""
    return [float(v) for v in np.quantile(np.asarray(values, float), qs)]


def _trial(args):
    config, trial = args
    model = load_problem(config)
    basis = fourier_basis(model, config.n) if config.n else empty_basis(model.dim_s)
    theta = _theta(model, config.theta_p)
    seq = scenario.trial_seed(config.seed, trial)
    grid = sorted(int(N) for N in config.N_grid)
    samples = scenario.sample_uniform(model, grid[-1], seq)
    tag = f"{config.seed}-{trial}-{grid[-1]}"
    cached = load_cache(model, basis, config.cache_dir, tag) if basis.n else 0
    if cached:
        basis.cache_capacity = max(basis.cache_capacity, len(samples))
    full = scenario.assemble(model, basis, samples, theta, seed=seq, use_cache=bool(cached))
    if config.cache_dir and basis.n and not cached:
        u = basis.evaluate_stacked(samples[:, : model.dim_s])
        tau = model.criterion.tau if isinstance(model.criterion, Discounted) else 1.0
        save_cache(model, basis, config.cache_dir, tag, samples, (u - full.constraint_matrix[:, 1:].T) / tau)
    out = []
    for N in grid:
        try:
            sol = scenario.solve(full.subset(N))
            out.append((trial, N, report_objective(model, sol.objective), sol.alpha_norm, ""))
        except NumericalError as exc:
            out.append((trial, N, math.nan, math.nan, type(exc).__name__))
    return out


def run_scenario_sweep(config: RunConfig):
    """Per-N summary rows and per-trial records; trials run on a worker pool."""
    jobs = [(config, t) for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_trial, jobs))
    else:
        results = [_trial(j) for j in jobs]
    records = [r for res in results for r in res]
    rows = []
    for N in sorted(int(N) for N in config.N_grid):
        vals = [r[2] for r in records if r[1] == N and not r[4]]
        failures = sum(1 for r in records if r[1] == N and r[4])
        if not vals:
            raise NumericalError(f"all trials failed at N={N}")
        q10, q90 = quantiles(vals)
        rows.append(
            {
                "N": N,
                "trials": len(vals),
                "failures": failures,
                # exactly rounded sum, independent of trial order
                "mean": math.fsum(vals) / len(vals),
                "min": min(vals),
                "max": max(vals),
                "q10": q10,
                "q90": q90,
            }
        )
    return rows, records


def run_smoothing_trace(config: RunConfig):
    model = load_problem(config)
    basis = fourier_basis(model, config.n)
    theta = _theta(model, config.theta_p)
    grid = smoothing.build_grid(model, basis, config.grid_nodes)
    rows, runs = smoothing.smoothing_trace(model, basis, theta, config.k_grid, grid)
    table = [
        {"k": k, "eps_prior": e, "eta": eta, "J_LB": report_objective(model, lb), "J_UB": report_objective(model, ub), "gap": gap}
        for k, e, eta, lb, ub, gap in rows
    ]
    return table, runs


def report_bounds(config: RunConfig):
    model = load_problem(config)
    basis = fourier_basis(model, max(config.n, 1))
    theta = _theta(model, config.theta_p)
    route = "smoothing" if config.route == "smoothing" else "scenario"
    d = config.d if config.d is not None else model.dim_s
    return bounds.composite_bound(model, basis, theta, config.D, d, config.epsilon, config.beta, route)


def _write_csv(path, rows, columns):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        wr = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if path:
            fh.close()


def write_manifest(config: RunConfig, extra: dict):
    if not config.out:
        return
    model = load_problem(config)
    manifest = {
        "version": __version__,
        "config": asdict(config),
        "seeds": {"base": config.seed, "streams": "SeedSequence(base, spawn_key=(trial,))"},
        "theta_P": _theta(model, config.theta_p),
        "objective": model.metadata.get("objective", "cost"),
        "cost_shift": model.metadata.get("cost_shift", 0.0),
        **extra,
    }
    with open(config.out + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _parse_grid(text):
    return tuple(int(float(v)) for v in text.split(",") if v.strip())


def build_parser():
    p = argparse.ArgumentParser(prog="mdplp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", default="lqg", help="lqg, fisheries, or a JSON problem file")
        sp.add_argument("--criterion", choices=("ac", "dc"), default="ac")
        sp.add_argument("--tau", type=float)
        sp.add_argument("--n", type=int, default=10)
        sp.add_argument("--theta-p", default="paper", help="paper, sup, inf or a number")
        sp.add_argument("--epsilon", type=float, default=0.1)
        sp.add_argument("--beta", type=float, default=0.05)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--quad-nodes", type=int, default=64)
        sp.add_argument("--objective", choices=("cost", "reward"), default="cost")
        sp.add_argument("--out")

    sp = sub.add_parser("scenario-sweep", help="multi-trial scenario programs over a grid of N")
    common(sp)
    sp.add_argument("--N-grid", dest="N_grid", type=_parse_grid, default=DEFAULT_N_GRID)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--per-trial", action="store_true")
    sp.add_argument("--cache-dir")

    sp = sub.add_parser("smooth-trace", help="posterior bounds of the smoothing scheme over k")
    common(sp)
    sp.add_argument("--k-grid", dest="k_grid", type=_parse_grid, default=DEFAULT_K_GRID)
    sp.add_argument("--grid-nodes", type=int, default=smoothing.GRID_NODES)

    sp = sub.add_parser("bounds", help="constants and certificates for one configuration")
    common(sp)
    sp.add_argument("--route", choices=("scenario", "smoothing"), default="scenario")
    sp.add_argument("--D", type=float, default=1.0)
    sp.add_argument("--d", type=int)

    sp = sub.add_parser("validate-model", help="probe kernel mass, cost sign and Lipschitz constants")
    common(sp)
    sp.add_argument("--probes", type=int, default=100)
    return p


def _config_from(args) -> RunConfig:
    keys = set(RunConfig.__dataclass_fields__)
    kw = {k: v for k, v in vars(args).items() if k in keys and v is not None}
    if "route" not in kw:
        kw["route"] = {"smooth-trace": "smoothing", "bounds": "scenario"}.get(args.command, "scenario")
    return RunConfig(**kw)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from(args)
        if args.command == "scenario-sweep":
            rows, records = run_scenario_sweep(config)
            _write_csv(config.out, rows, ["N", "trials", "failures", "mean", "min", "max", "q10", "q90"])
            if config.per_trial and config.out:
                per = [
                    {"trial": t, "seed_entropy": config.seed, "N": N, "objective": v, "alpha_norm": a}
                    for t, N, v, a, err in records
                ]
                _write_csv(config.out + ".trials.csv", per, ["trial", "seed_entropy", "N", "objective", "alpha_norm"])
            write_manifest(config, {"rows": len(rows)})
        elif args.command == "smooth-trace":
            table, runs = run_smoothing_trace(config)
            _write_csv(config.out, table, ["k", "eps_prior", "eta", "J_LB", "J_UB", "gap"])
            write_manifest(config, {"flags": sorted({f for r in runs for f in r.flags})})
        elif args.command == "bounds":
            report = report_bounds(config)
            text = report.to_json(indent=2)
            print(text)
            if config.out:
                with open(config.out, "w") as fh:
                    fh.write(text)
        elif args.command == "validate-model":
            model = load_problem(config)
            rep = validate_model(model, probe_count=args.probes, seed=config.seed)
            text = json.dumps(rep.to_dict(), indent=2)
            print(text)
            if config.out:
                with open(config.out, "w") as fh:
                    fh.write(text)
            if not rep.ok:
                return 3
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, MdpLpError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
