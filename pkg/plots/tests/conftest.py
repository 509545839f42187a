"""Synthetic fbheat-format artifacts for renderer tests.

Built by hand (not via the fbheat package) so these tests pin the file
formats themselves."""

import json
import math

import numpy as np
import pytest


def _manifest(config):
    return {
        "config": config,
        "seed": {"master_seed": 1, "stream_id": 0},
        "versions": {"fbheat": "0.1.0", "numpy": np.__version__, "python": "3"},
        "wall_time": 0.1,
    }


def _write_manifest(rundir, config, extra=None):
    m = _manifest(config)
    if extra:
        m.update(extra)
    (rundir / "manifest.json").write_text(json.dumps(m))


@pytest.fixture
def grid_run(tmp_path):
    """A solve-j-pde style run: linear-case grid with its manifest."""
    rundir = tmp_path / "grid_run"
    rundir.mkdir()
    q = np.linspace(0.0, 2.0, 21)
    b = np.linspace(0.0, 4.0, 21)
    lines = ["q,b,J"]
    for qi in q:
        slope = (4 * math.pi - qi) ** -0.5
        for bj in b:
            lines.append(f"{qi:.17g},{bj:.17g},{bj * slope:.17g}")
    (rundir / "grid.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(
        rundir,
        {"sigma": {"kind": "linear", "beta": 1.0}, "master_seed": 1},
        {"beta": 1.0},
    )
    return rundir


@pytest.fixture
def xi_run(tmp_path):
    """A simulate-xi style run: log-normal terminal samples."""
    rundir = tmp_path / "xi_run"
    rundir.mkdir()
    gen = np.random.default_rng(0)
    mu, s2 = -0.0866739, 0.1733479
    samples = np.exp(mu + math.sqrt(s2) * gen.standard_normal(5000))
    lines = ["path_id,value"] + [f"{i},{v:.17g}" for i, v in enumerate(samples)]
    (rundir / "terminal.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(rundir, {"a": 1.0, "Q": 2.0, "master_seed": 1})
    return rundir


@pytest.fixture
def oracle_json(tmp_path):
    path = tmp_path / "oracle.json"
    path.write_text(
        json.dumps(
            {
                "beta": 1.0,
                "a": 1.0,
                "Q": 2.0,
                "s2": 0.17334787271519755,
                "mu_log": -0.08667393635759878,
                "jbar_Q": 0.30763594645938674,
            }
        )
    )
    return path


@pytest.fixture
def ks_report(tmp_path):
    path = tmp_path / "report.json"
    path.write_text(
        json.dumps({"kind": "ensemble", "ks_distance": 0.0123456789, "n": 5000})
    )
    return path


@pytest.fixture
def cov_reports(tmp_path):
    paths = []
    for i, (d, cov, oracle) in enumerate(
        [(0.0, 0.172, 0.17335), (0.5, 0.0911, 0.09043), (1.0, -0.0003, 0.0)]
    ):
        p = tmp_path / f"cov_{i}.json"
        p.write_text(
            json.dumps(
                {
                    "kind": "multipoint",
                    "d": d,
                    "log_cov": cov,
                    "stderr": 0.001,
                    "excluded": 0,
                    "oracle": oracle,
                    "n": 100000,
                }
            )
        )
        paths.append(p)
    return paths


@pytest.fixture
def jeps_runs(tmp_path):
    runs = []
    for eps, j in [(0.1, 0.2973), (0.05, 0.2966), (0.02, 0.2963)]:
        rundir = tmp_path / f"jeps_{eps}"
        rundir.mkdir()
        (rundir / "estimates.csv").write_text(
            f"q,j_eps,stderr\n1,{j:.17g},0.00045\n"
        )
        delta = (math.log(1.0 / eps)) ** -0.5
        _write_manifest(
            rundir,
            {
                "spde": {
                    "L": 64.0,
                    "n_grid": 128,
                    "eps": 1.0,
                    "a": 1.0,
                    "dt_factor": 0.25,
                    "T": 1.0 / eps,
                    "attenuation": delta,
                },
                "master_seed": 1,
            },
        )
        runs.append(rundir)
    return runs


@pytest.fixture
def picard_run(tmp_path):
    rundir = tmp_path / "picard_run"
    rundir.mkdir()
    (rundir / "diagnostics.json").write_text(
        json.dumps(
            {
                "iterations": [1.2e-3, 2.2e-4, 1.9e-4],
                "noise_floor": 5.4e-4,
                "converged": True,
            }
        )
    )
    _write_manifest(rundir, {"sigma": {"kind": "linear", "beta": 1.0}, "master_seed": 1})
    return rundir
