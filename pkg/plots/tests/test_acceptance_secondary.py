"""Secondary acceptance: all five figure kinds render with exit code 0 from
real artifacts produced through the fbheat CLI, and TerminalHist prints the
same KS value the stats report carries.

The runs here use the acceptance configurations at reduced sample counts
(figures do not need 1e5 paths); the artifact schemas are identical.
"""

import json
import math

import pytest

fbheat_cli = pytest.importorskip(
    "fbheat.cli", reason="secondary acceptance needs the primary package installed"
)

from fbheat_plots.cli import run as plots_run

PNG_MAGIC = b"\x89PNG"


def _fb(args):
    assert fbheat_cli.run(args) == 0, f"fbheat {args} failed"


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("primary_runs")

    def cfg(name, obj):
        p = root / name
        p.write_text(json.dumps(obj))
        return str(p)

    runs = {}

    pde = cfg(
        "pde.json",
        {
            "master_seed": 11,
            "label": "fig-pde",
            "sigma": {"kind": "linear", "beta": 1.0},
            "grid": {"q_step": 0.02, "b_max": 8.0, "b_step": 0.05},
            "pde": {"dq": 2e-3},
        },
    )
    runs["pde"] = root / "pde"
    _fb(["solve-j-pde", "--config", pde, "--output", str(runs["pde"])])

    picard = cfg(
        "picard.json",
        {
            "master_seed": 12,
            "label": "fig-picard",
            "sigma": {"kind": "linear", "beta": 1.0},
            "grid": {"q_step": 0.1, "b_max": 4.0, "b_step": 0.2},
            "picard": {"n_paths_per_node": 2000, "dt": 5e-3, "max_iters": 10},
        },
    )
    runs["picard"] = root / "picard"
    _fb(["solve-j", "--config", picard, "--output", str(runs["picard"])])

    xi = cfg(
        "xi.json",
        {
            "master_seed": 13,
            "label": "fig-xi",
            "j_source": {"linear": {"beta": 1.0, "q_step": 0.02, "b_max": 4.0, "b_step": 0.05}},
            "a": 1.0,
            "Q": 2.0,
            "dt": 2e-3,
            "n_paths": 20_000,
        },
    )
    runs["xi"] = root / "xi"
    _fb(["simulate-xi", "--config", xi, "--output", str(runs["xi"])])

    runs["oracle"] = root / "oracle"
    _fb(["linear-oracle", "--Q", "2", "--beta", "1", "--a", "1", "--output", str(runs["oracle"])])
    runs["oracle_q1"] = root / "oracle_q1"
    _fb(["linear-oracle", "--Q", "1", "--beta", "1", "--a", "1", "--output", str(runs["oracle_q1"])])

    ens_cmp = cfg(
        "cmp.json",
        {
            "master_seed": 0,
            "label": "fig-cmp",
            "kind": "ensemble",
            "terminal_csv": str(runs["xi"] / "terminal.csv"),
            "law": {"a": 1.0, "Q": 2.0, "beta": 1.0},
        },
    )
    runs["ks_report"] = root / "ks_report"
    _fb(["compare", "--config", ens_cmp, "--output", str(runs["ks_report"])])

    runs["cov_reports"] = []
    for i, d in enumerate((0.0, 0.5, 1.0)):
        mp = cfg(
            f"mp{i}.json",
            {
                "master_seed": 14 + i,
                "label": f"fig-mp-{d}",
                "j_source": {"linear": {"beta": 1.0, "q_step": 0.02, "b_max": 4.0, "b_step": 0.05}},
                "a": 1.0,
                "Q": 2.0,
                "dt": 2e-3,
                "n_paths": 20_000,
                "d": [[None, d], [d, None]],
            },
        )
        mp_out = root / f"mp{i}"
        _fb(["simulate-multipoint", "--config", mp, "--output", str(mp_out)])
        mp_cmp = cfg(
            f"mpcmp{i}.json",
            {
                "master_seed": 0,
                "label": f"fig-mpcmp-{d}",
                "kind": "multipoint",
                "terminal_csv": str(mp_out / "terminal.csv"),
                "d": d,
                "Q": 2.0,
                "beta": 1.0,
            },
        )
        rep_out = root / f"mp_report{i}"
        _fb(["compare", "--config", mp_cmp, "--output", str(rep_out)])
        runs["cov_reports"].append(rep_out / "report.json")

    runs["jeps"] = []
    for eps, L, n in ((0.2, 48.0, 96), (0.1, 64.0, 128)):
        je = cfg(
            f"jeps_{eps}.json",
            {
                "master_seed": 21,
                "label": f"fig-jeps-{eps}",
                "spde": {
                    "L": L,
                    "n_grid": n,
                    "eps": 1.0,
                    "a": 1.0,
                    "dt_factor": 0.25,
                    "T": 1.0 / eps,
                    "attenuation": (math.log(1.0 / eps)) ** -0.5,
                },
                "sigma": {"kind": "linear", "beta": 1.0},
                "q_list": [1.0],
                "a": 1.0,
                "n_realizations": 8,
            },
        )
        out = root / f"jeps_{eps}"
        _fb(["estimate-jeps", "--config", je, "--output", str(out)])
        runs["jeps"].append(out)

    return runs


def test_secondary_12_all_kinds_render(artifacts, tmp_path, capsys):
    out = tmp_path

    assert plots_run(["JSurface", "--manifest", str(artifacts["pde"]), "--out", str(out / "surface.png")]) == 0
    assert plots_run(["PicardTrace", "--manifest", str(artifacts["picard"]), "--out", str(out / "trace.png")]) == 0

    code = plots_run(
        [
            "TerminalHist",
            "--manifest", str(artifacts["xi"]),
            "--oracle", str(artifacts["oracle"] / "oracle.json"),
            "--report", str(artifacts["ks_report"] / "report.json"),
            "--out", str(out / "hist.png"),
        ]
    )
    assert code == 0
    printed = capsys.readouterr().out
    ks_in_report = json.loads((artifacts["ks_report"] / "report.json").read_text())["ks_distance"]
    assert f"{ks_in_report:.17g}" in printed  # identical value, full precision

    args = ["CovBars", "--out", str(out / "cov.png")]
    for rp in artifacts["cov_reports"]:
        args += ["--report", str(rp)]
    assert plots_run(args) == 0

    args = ["JepsTrend", "--oracle", str(artifacts["oracle_q1"] / "oracle.json"), "--out", str(out / "trend.png")]
    for r in artifacts["jeps"]:
        args += ["--manifest", str(r)]
    assert plots_run(args) == 0

    for name in ("surface.png", "trace.png", "hist.png", "cov.png", "trend.png"):
        assert (out / name).read_bytes()[:4] == PNG_MAGIC

    print(
        "ACCEPTANCE criterion 12 PASS: five figure kinds rendered exit-0; "
        f"TerminalHist printed KS={ks_in_report:.6f} matching the stats report"
    )
