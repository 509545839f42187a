"""Figure rendering from fbheat run directories.

Each figure kind reads the artifacts named by a run's manifest.json (grids,
terminal ensembles, diagnostics, oracle laws, comparison reports), validates
the schema it expects, and writes a single raster image. Inputs are never
modified; any schema drift raises :class:`SchemaError` naming the offending
column or key.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class SchemaError(ValueError):
    """An input artifact does not match the schema its figure kind expects."""


class FigureKind(str, Enum):
    J_SURFACE = "JSurface"
    TERMINAL_HIST = "TerminalHist"
    COV_BARS = "CovBars"
    JEPS_TREND = "JepsTrend"
    PICARD_TRACE = "PicardTrace"


@dataclass(frozen=True)
class FigureRequest:
    kind: FigureKind
    manifests: tuple[str, ...]
    out: str
    oracle: str | None = None
    reports: tuple[str, ...] = field(default_factory=tuple)
    title: str | None = None
    dpi: int = 130


def _load_manifest(path: str) -> tuple[Path, dict]:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise SchemaError(f"manifest not found: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("config", "seed", "versions"):
        if key not in manifest:
            raise SchemaError(f"{p}: manifest missing key '{key}'")
    return p.parent, manifest


def _load_csv(path: Path, expected_header: str) -> np.ndarray:
    if not path.exists():
        raise SchemaError(f"artifact not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    want = expected_header.split(",")
    got = header.split(",")
    if got != want:
        bad = next((c for c in got if c not in want), header)
        raise SchemaError(
            f"{path}: unexpected column '{bad}' (header '{header}', expected '{expected_header}')"
        )
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(want):
        raise SchemaError(f"{path}: {data.shape[1]} columns, expected {len(want)}")
    return data


def _load_json(path: str | Path, required: tuple[str, ...]) -> dict:
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"file not found: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    for key in required:
        if key not in obj:
            raise SchemaError(f"{p}: missing key '{key}'")
    return obj


def _grid_from_rows(data: np.ndarray):
    q = np.unique(data[:, 0])
    b = np.unique(data[:, 1])
    if data.shape[0] != q.size * b.size:
        raise SchemaError("grid rows do not form a complete tensor grid")
    return q, b, data[:, 2].reshape(q.size, b.size)


def _render_j_surface(req: FigureRequest) -> None:
    rundir, manifest = _load_manifest(req.manifests[0])
    q, b, J = _grid_from_rows(_load_csv(rundir / "grid.csv", "q,b,J"))
    sigma = manifest["config"].get("sigma", {})
    beta = manifest.get("beta", sigma.get("beta"))
    is_linear = sigma.get("kind") == "linear" and beta

    ncols = 2 if is_linear else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.2 * ncols, 4.2), squeeze=False)
    ax = axes[0, 0]
    pc = ax.pcolormesh(b, q, J, shading="auto", cmap="viridis")
    fig.colorbar(pc, ax=ax, label="J(q, b)")
    ax.set_xlabel("b")
    ax.set_ylabel("q")
    ax.set_title(req.title or "decoupling function")

    if is_linear:
        slope = (4.0 * math.pi / beta**2 - q) ** -0.5
        oracle = slope[:, None] * b[None, :]
        rel = np.abs(J - oracle) / np.maximum(oracle, 1e-300)
        rel[:, b < 1e-12] = 0.0
        ax2 = axes[0, 1]
        pc2 = ax2.pcolormesh(b, q, rel, shading="auto", cmap="magma")
        fig.colorbar(pc2, ax=ax2, label="|rel. error| vs linear oracle")
        ax2.set_xlabel("b")
        ax2.set_ylabel("q")
        ax2.set_title(f"max rel err = {rel.max():.2e}")
    fig.tight_layout()
    fig.savefig(req.out, dpi=req.dpi)
    plt.close(fig)


def _render_terminal_hist(req: FigureRequest) -> None:
    rundir, _ = _load_manifest(req.manifests[0])
    data = _load_csv(rundir / "terminal.csv", "path_id,value")
    samples = data[:, 1]
    if req.oracle is None:
        raise SchemaError("TerminalHist needs --oracle (linear-oracle JSON)")
    law = _load_json(req.oracle, ("mu_log", "s2"))
    mu, s2 = float(law["mu_log"]), float(law["s2"])

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.hist(samples, bins=120, density=True, alpha=0.55, label="terminal samples")
    x = np.linspace(max(samples.min(), 1e-6), samples.max(), 800)
    pdf = np.exp(-((np.log(x) - mu) ** 2) / (2 * s2)) / (x * math.sqrt(2 * math.pi * s2))
    ax.plot(x, pdf, "k-", lw=1.5, label="log-normal density")
    label = req.title or "terminal law vs oracle"
    if req.reports:
        report = _load_json(req.reports[0], ("ks_distance",))
        ks = float(report["ks_distance"])
        print(f"ks_distance = {ks:.17g}")
        label += f" (KS = {ks:.4f})"
    ax.set_xlabel("terminal value")
    ax.set_ylabel("density")
    ax.set_title(label)
    ax.legend()
    fig.tight_layout()
    fig.savefig(req.out, dpi=req.dpi)
    plt.close(fig)


def _render_cov_bars(req: FigureRequest) -> None:
    if not req.reports:
        raise SchemaError("CovBars needs at least one --report (multipoint compare JSON)")
    rows = []
    for rp in req.reports:
        rep = _load_json(rp, ("d", "log_cov", "stderr", "oracle"))
        rows.append((float(rep["d"]), float(rep["log_cov"]), float(rep["stderr"]), float(rep["oracle"])))
    rows.sort()
    d, cov, se, oracle = (np.array(x) for x in zip(*rows))

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    xpos = np.arange(d.size)
    ax.bar(xpos, cov, yerr=3 * se, width=0.55, capsize=5, alpha=0.7, label="empirical (3 SE)")
    ax.plot(xpos, oracle, "kD", ms=7, label="oracle")
    ax.set_xticks(xpos, [f"d = {x:g}" for x in d])
    ax.set_ylabel("Cov(log terminal values)")
    ax.set_title(req.title or "multipoint log-covariance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(req.out, dpi=req.dpi)
    plt.close(fig)


def _render_jeps_trend(req: FigureRequest) -> None:
    points = []
    for m in req.manifests:
        rundir, manifest = _load_manifest(m)
        est = _load_csv(rundir / "estimates.csv", "q,j_eps,stderr")
        att = manifest["config"].get("spde", {}).get("attenuation")
        if att == "paper":
            eps = float(manifest["config"]["spde"]["eps"])
        elif isinstance(att, (int, float)):
            eps = math.exp(-1.0 / float(att) ** 2)
        else:
            raise SchemaError(f"{m}: cannot infer eps from attenuation {att!r}")
        for q, j, se in est:
            points.append((eps, q, j, se))
    if not points:
        raise SchemaError("JepsTrend found no estimates")
    points.sort(reverse=True)
    eps, _, j, se = (np.array(x) for x in zip(*points))

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.errorbar(eps, j, yerr=3 * se, fmt="o-", capsize=4, label="J_eps estimate (3 SE)")
    if req.oracle is not None:
        law = _load_json(req.oracle, ("jbar_Q",))
        ax.axhline(float(law["jbar_Q"]), color="k", ls="--", lw=1.2, label="limit J")
    ax.set_xscale("log")
    ax.invert_xaxis()
    ax.set_xlabel("eps (log scale, decreasing)")
    ax.set_ylabel("empirical decoupling value")
    ax.set_title(req.title or "J_eps trend toward the limit")
    ax.legend()
    fig.tight_layout()
    fig.savefig(req.out, dpi=req.dpi)
    plt.close(fig)


def _render_picard_trace(req: FigureRequest) -> None:
    rundir, _ = _load_manifest(req.manifests[0])
    diag = _load_json(rundir / "diagnostics.json", ("iterations", "noise_floor", "converged"))
    dists = np.asarray(diag["iterations"], dtype=float)
    if dists.ndim != 1 or dists.size == 0:
        raise SchemaError("diagnostics.json: 'iterations' must be a nonempty list")

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.semilogy(np.arange(1, dists.size + 1), dists, "o-", label="successive distance")
    ax.axhline(float(diag["noise_floor"]), color="k", ls="--", lw=1.2, label="noise floor")
    ax.set_xlabel("iteration")
    ax.set_ylabel("weighted-norm distance")
    status = "converged" if diag["converged"] else "NOT converged"
    ax.set_title(req.title or f"fixed-point iteration ({status})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(req.out, dpi=req.dpi)
    plt.close(fig)


_RENDERERS = {
    FigureKind.J_SURFACE: _render_j_surface,
    FigureKind.TERMINAL_HIST: _render_terminal_hist,
    FigureKind.COV_BARS: _render_cov_bars,
    FigureKind.JEPS_TREND: _render_jeps_trend,
    FigureKind.PICARD_TRACE: _render_picard_trace,
}


def render(req: FigureRequest) -> None:
    """Render one figure to req.out; raises SchemaError on artifact drift."""
    if not req.manifests and req.kind is not FigureKind.COV_BARS:
        raise SchemaError(f"{req.kind.value} needs at least one --manifest")
    _RENDERERS[req.kind](req)
