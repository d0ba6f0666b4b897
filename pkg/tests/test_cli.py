import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mdplp import cli
from mdplp.errors import ConfigError


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_bounds_json_ac(capsys):
    assert cli.main(["bounds", "--problem", "lqg", "--n", "2", "--epsilon", "0.5", "--beta", "0.1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["theta_D"] == 1.0 and rep["route"] == "scenario"
    assert rep["N_required"] >= 1 and rep["eta"] is None and rep["k_required"] is None


def test_bounds_smoothing_route(capsys):
    assert cli.main(["bounds", "--route", "smoothing", "--n", "10", "--epsilon", "1.0"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["N_required"] is None and rep["k_required"] >= 1 and rep["eta"] > 0


def test_coarse_precision_is_config_error(capsys):
    assert cli.main(["bounds", "--route", "smoothing", "--epsilon", "1e9"]) == 2
    assert "PrecisionTooCoarse" in capsys.readouterr().err


def test_bad_inputs_exit_two(tmp_path, capsys):
    assert cli.main(["bounds", "--problem", "pendulum"]) == 2
    assert cli.main(["bounds", "--criterion", "dc"]) == 2
    assert cli.main(["scenario-sweep", "--trials", "0"]) == 2
    assert cli.main(["bounds", "--out", str(tmp_path / "missing" / "x.json")]) == 2
    bad = tmp_path / "p.json"
    bad.write_text(json.dumps({"problem": "lqg", "params": {"sigma": -1}}))
    assert cli.main(["bounds", "--problem", str(bad)]) == 2
    capsys.readouterr()


def test_problem_file(tmp_path, capsys):
    f = tmp_path / "p.json"
    f.write_text(json.dumps({"problem": "lqg", "params": {"sigma": 2.0}}))
    assert cli.main(["bounds", "--problem", str(f), "--n", "2", "--epsilon", "0.5"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["theta_P"] == pytest.approx(150.0 * max(cli.load_problem(cli.RunConfig(problem=str(f))).lipschitz_kernel, 1))


def test_validate_model_exit_zero(capsys):
    assert cli.main(["validate-model", "--problem", "fisheries", "--probes", "20"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["flags"] == []


def test_quantiles_match_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.normal(size=int(rng.integers(1, 60)))
        s = np.sort(v)
        for q in (0.1, 0.9):
            pos = q * (len(s) - 1)
            lo = int(np.floor(pos))
            hi = min(lo + 1, len(s) - 1)
            ref = s[lo] + (pos - lo) * (s[hi] - s[lo])
            assert cli.quantiles(v, (q,))[0] == pytest.approx(ref, abs=1e-12)


def test_sweep_deterministic_with_manifest(tmp_path):
    out = [str(tmp_path / f"s{i}.csv") for i in range(2)]
    args = ["scenario-sweep", "--problem", "fisheries", "--n", "2", "--N-grid", "10,40", "--trials", "3", "--seed", "5", "--theta-p", "sup"]
    for o in out:
        assert cli.main(args + ["--out", o, "--per-trial"]) == 0
    a, b = read_csv(out[0]), read_csv(out[1])
    assert a == b and [r["N"] for r in a] == ["10", "40"]
    assert list(a[0]) == ["N", "trials", "failures", "mean", "min", "max", "q10", "q90"]
    # more samples never raise the value
    assert float(a[1]["mean"]) <= float(a[0]["mean"]) + 1e-9
    man = json.load(open(out[0] + ".manifest.json"))
    assert man["config"]["seed"] == 5 and man["version"]
    assert "cost_shift" in man
    per = read_csv(out[0] + ".trials.csv")
    assert len(per) == 6


def test_parallel_sweep_matches_serial():
    cfg = dict(problem="lqg", n=2, N_grid=(20, 50), trials=2, seed=1, theta_p="sup")
    serial, _ = cli.run_scenario_sweep(cli.RunConfig(**cfg))
    par, _ = cli.run_scenario_sweep(cli.RunConfig(workers=2, **cfg))
    assert serial == par


def test_cache_roundtrip(tmp_path):
    cfg = cli.RunConfig(problem="lqg", n=3, N_grid=(30,), trials=2, seed=2, theta_p="sup", cache_dir=str(tmp_path))
    first, _ = cli.run_scenario_sweep(cfg)
    files = sorted(os.listdir(tmp_path))
    assert len(files) == 2 and all(f.endswith(".npz") for f in files)
    with np.load(tmp_path / files[0]) as data:
        assert data["points"].shape == (30, 2) and data["values"].shape == (3, 30)
    again, _ = cli.run_scenario_sweep(cfg)
    assert again == first
    # a different basis hashes to a different file
    cli.run_scenario_sweep(cli.RunConfig(problem="lqg", n=4, N_grid=(30,), trials=1, seed=2, theta_p="sup", cache_dir=str(tmp_path)))
    assert len(os.listdir(tmp_path)) == 3


def test_smooth_trace_small(tmp_path):
    out = str(tmp_path / "t.csv")
    assert cli.main(["smooth-trace", "--n", "2", "--k-grid", "10", "--grid-nodes", "32", "--theta-p", "sup", "--out", out]) == 0
    rows = read_csv(out)
    assert len(rows) == 1 and float(rows[0]["gap"]) > 0
    assert list(rows[0]) == ["k", "eps_prior", "eta", "J_LB", "J_UB", "gap"]


def test_run_config_validation():
    with pytest.raises(ConfigError):
        cli.RunConfig(criterion="avg")
    with pytest.raises(ConfigError):
        cli.RunConfig(route="exact")
    with pytest.raises(ConfigError):
        cli.RunConfig(basis_family="legendre")


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "mdplp.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
