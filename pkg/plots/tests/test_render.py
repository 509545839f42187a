"""Renderer contract: every kind draws from valid artifacts, schema drift
exits nonzero naming the offender, inputs are never mutated."""

import hashlib

import pytest

from fbheat_plots.cli import run

PNG_MAGIC = b"\x89PNG"


def _hash_tree(root):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_j_surface_renders(grid_run, tmp_path):
    out = tmp_path / "surface.png"
    before = _hash_tree(grid_run)
    assert run(["JSurface", "--manifest", str(grid_run), "--out", str(out)]) == 0
    assert out.read_bytes()[:4] == PNG_MAGIC
    assert _hash_tree(grid_run) == before  # inputs untouched


def test_terminal_hist_renders_and_prints_ks(xi_run, oracle_json, ks_report, tmp_path, capsys):
    out = tmp_path / "hist.png"
    code = run(
        [
            "TerminalHist",
            "--manifest",
            str(xi_run),
            "--oracle",
            str(oracle_json),
            "--report",
            str(ks_report),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert out.read_bytes()[:4] == PNG_MAGIC
    # prints exactly the KS value carried by the stats report
    assert "0.0123456789" in capsys.readouterr().out


def test_cov_bars_renders(cov_reports, tmp_path):
    out = tmp_path / "cov.png"
    args = ["CovBars", "--out", str(out)]
    for p in cov_reports:
        args += ["--report", str(p)]
    assert run(args) == 0
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_jeps_trend_renders(jeps_runs, oracle_json, tmp_path):
    out = tmp_path / "trend.png"
    args = ["JepsTrend", "--oracle", str(oracle_json), "--out", str(out)]
    for r in jeps_runs:
        args += ["--manifest", str(r)]
    assert run(args) == 0
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_picard_trace_renders(picard_run, tmp_path):
    out = tmp_path / "trace.png"
    assert run(["PicardTrace", "--manifest", str(picard_run), "--out", str(out)]) == 0
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_schema_drift_names_offending_column(grid_run, tmp_path, capsys):
    csv = grid_run / "grid.csv"
    text = csv.read_text().replace("q,b,J", "q,b,value")
    csv.write_text(text)
    out = tmp_path / "surface.png"
    assert run(["JSurface", "--manifest", str(grid_run), "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "value" in err and "schema error" in err


def test_missing_manifest_fails(tmp_path, capsys):
    out = tmp_path / "x.png"
    assert run(["JSurface", "--manifest", str(tmp_path / "nope"), "--out", str(out)]) == 2
    assert "manifest" in capsys.readouterr().err


def test_terminal_hist_requires_oracle(xi_run, tmp_path, capsys):
    out = tmp_path / "hist.png"
    assert run(["TerminalHist", "--manifest", str(xi_run), "--out", str(out)]) == 2
    assert "oracle" in capsys.readouterr().err


def test_manifest_schema_checked(tmp_path, capsys):
    rundir = tmp_path / "broken"
    rundir.mkdir()
    (rundir / "manifest.json").write_text('{"config": {}}')
    out = tmp_path / "x.png"
    assert run(["PicardTrace", "--manifest", str(rundir), "--out", str(out)]) == 2
    assert "seed" in capsys.readouterr().err
