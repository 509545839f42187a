"""Batch experiment runner: every pipeline as a subcommand.

Configuration is JSON (strict: unknown keys are rejected), numeric artifacts
are CSV written with 17 significant digits, and every run directory gets
exactly one manifest.json echoing the config, the library versions, the
seed, and the wall time. Exit codes: 0 success, 2 validation error,
3 numerical failure. Re-running a subcommand with the same config and seed
byte-reproduces every CSV regardless of --threads.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    ConfigError,
    DecouplingGrid,
    GridSpec,
    Nonlinearity,
    SeededRng,
    SigmaKind,
    grid_from_csv,
    grid_to_csv,
    resample_grid,
)
from .decoupling import (
    PdeParams,
    PdeScheme,
    PicardParams,
    direct_pde_solve,
    fixed_point_solve,
)
from .linear_oracle import (
    exact_linear_grid,
    jbar,
    lognormal_cdf,
    lognormal_params,
    multipoint_cov,
)
from .parallel import default_threads
from .sde import SdeParams, UltrametricConfig, simulate_multipoint, simulate_xi
from .spde import (
    GaussianBump,
    SpdeConfig,
    estimate_j_eps,
    ew_variance_functional,
    simulate_spde,
)
from .stats import empirical_moments, ks_distance

_MISSING = object()


class _Strict:
    """Dict view that tracks consumption and rejects leftover keys."""

    def __init__(self, data: dict, where: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected a JSON object")
        self._d = dict(data)
        self.where = where

    def take(self, key, kind, default=_MISSING):
        if key not in self._d:
            if default is _MISSING:
                raise ConfigError(f"{self.where}: missing required key '{key}'")
            return default
        val = self._d.pop(key)
        try:
            return kind(val) if kind is not None else val
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.where}.{key}: {exc}") from exc

    def sub(self, key, required=True):
        if key not in self._d:
            if required:
                raise ConfigError(f"{self.where}: missing required key '{key}'")
            return None
        return _Strict(self._d.pop(key), f"{self.where}.{key}")

    def done(self):
        if self._d:
            raise ConfigError(
                f"{self.where}: unknown keys {sorted(self._d)} (strict parsing)"
            )


def _as_float(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _as_int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def _as_str(v) -> str:
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _float_list(v) -> list[float]:
    if not isinstance(v, list):
        raise ValueError(f"expected a list of numbers, got {v!r}")
    return [_as_float(x) for x in v]


def _parse_sigma(s: _Strict | None) -> Nonlinearity:
    kind = s.take("kind", _as_str)
    beta = s.take("beta", _as_float)
    table = s.take("table", None, default=None)
    s.done()
    if kind == "linear":
        return Nonlinearity.linear(beta)
    if kind == "saturating":
        return Nonlinearity.saturating(beta)
    if kind == "table":
        if not isinstance(table, list):
            raise ConfigError("sigma.table must be a list of [u, sigma] pairs")
        return Nonlinearity.from_table(table, beta)
    raise ConfigError(f"unknown sigma kind '{kind}'")


def _parse_grid_spec(s: _Strict) -> GridSpec:
    spec = GridSpec(
        q_step=s.take("q_step", _as_float),
        b_max=s.take("b_max", _as_float),
        b_step=s.take("b_step", _as_float),
    )
    s.done()
    return spec


def _parse_j_source(s: _Strict) -> tuple[DecouplingGrid, float]:
    """Either an exact linear-oracle grid or a grid CSV with its beta."""
    lin = s.sub("linear", required=False)
    csv = s.sub("csv", required=False)
    s.done()
    if (lin is None) == (csv is None):
        raise ConfigError("j_source needs exactly one of 'linear' or 'csv'")
    if lin is not None:
        beta = lin.take("beta", _as_float)
        spec = GridSpec(
            q_step=lin.take("q_step", _as_float, default=0.01),
            b_max=lin.take("b_max", _as_float, default=8.0),
            b_step=lin.take("b_step", _as_float, default=0.05),
        )
        lin.done()
        return exact_linear_grid(spec, beta), beta
    path = csv.take("path", _as_str)
    beta = csv.take("beta", _as_float)
    csv.done()
    if not Path(path).exists():
        raise ConfigError(f"grid CSV not found: {path}")
    return grid_from_csv(path, beta), beta


def _parse_spde(s: _Strict) -> SpdeConfig:
    att = s.take("attenuation", None, default="paper")
    if not (att == "paper" or isinstance(att, (int, float))):
        raise ConfigError("spde.attenuation must be 'paper' or a positive number")
    cfg = SpdeConfig(
        L=s.take("L", _as_float),
        n_grid=s.take("n_grid", _as_int),
        eps=s.take("eps", _as_float),
        a=s.take("a", _as_float),
        dt_factor=s.take("dt_factor", _as_float),
        T=s.take("T", _as_float),
        attenuation=att if att == "paper" else float(att),
    )
    s.done()
    return cfg


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_manifest(outdir: Path, config: dict, seed: SeededRng, t0: float, extra=None):
    manifest = {
        "config": config,
        "versions": {
            "fbheat": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time": time.time() - t0,
        "seed": {"master_seed": seed.master_seed, "stream_id": seed.stream_id},
    }
    if extra:
        manifest.update(extra)
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Run:
    """Shared per-invocation context: config dict, seed, output dir, threads."""

    def __init__(self, args):
        self.t0 = time.time()
        if args.config:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
            try:
                self.config = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(
                    f"malformed JSON in {args.config} at line {exc.lineno} "
                    f"column {exc.colno}: {exc.msg}"
                ) from exc
        else:
            self.config = {}
        self.strict = _Strict(self.config, "config")
        master_seed = self.strict.take("master_seed", _as_int, default=0)
        stream_id = self.strict.take("stream_id", _as_int, default=0)
        self.label = self.strict.take("label", _as_str, default="")
        outdir = self.strict.take("output_dir", _as_str, default=None)
        if args.seed is not None:
            master_seed = args.seed
        if args.output is not None:
            outdir = args.output
        if outdir is None:
            raise ConfigError("no output directory: set output_dir or pass --output")
        self.seed = SeededRng(master_seed, stream_id)
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.threads = args.threads if args.threads else default_threads()
        # echo effective seed/output back into the manifest copy of the config
        self.config["master_seed"] = master_seed
        self.config["stream_id"] = stream_id
        self.config["output_dir"] = str(outdir)

    def finish(self, extra=None):
        _write_manifest(self.outdir, self.config, self.seed, self.t0, extra)


def _cmd_solve_j(args) -> int:
    run = _Run(args)
    nl = _parse_sigma(run.strict.sub("sigma"))
    spec = _parse_grid_spec(run.strict.sub("grid"))
    pc = run.strict.sub("picard")
    params = PicardParams(
        n_paths_per_node=pc.take("n_paths_per_node", _as_int),
        dt=pc.take("dt", _as_float),
        max_iters=pc.take("max_iters", _as_int),
        tol=pc.take("tol", _as_float, default=None),
        damping=pc.take("damping", _as_float, default=1.0),
    )
    pc.done()
    run.strict.done()
    grid, diag = fixed_point_solve(nl, spec, params, run.seed, threads=run.threads)
    grid_to_csv(grid, run.outdir / "grid.csv")
    with open(run.outdir / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(diag.to_json_dict(), fh, indent=2)
        fh.write("\n")
    run.finish({"beta": nl.beta})
    return 0


def _cmd_solve_j_pde(args) -> int:
    run = _Run(args)
    nl = _parse_sigma(run.strict.sub("sigma"))
    spec = _parse_grid_spec(run.strict.sub("grid"))
    pd = run.strict.sub("pde")
    scheme = pd.take("scheme", _as_str, default="semi_implicit")
    try:
        scheme = PdeScheme(scheme)
    except ValueError:
        raise ConfigError(f"unknown PDE scheme '{scheme}'") from None
    params = PdeParams(dq=pd.take("dq", _as_float), scheme=scheme)
    pd.done()
    run.strict.done()
    grid, diag = direct_pde_solve(nl, spec, params)
    grid_to_csv(grid, run.outdir / "grid.csv")
    with open(run.outdir / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "negative_clamps": diag.negative_clamps,
                "scheme": diag.scheme,
                "dq": diag.dq,
                "max_u": diag.max_u,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    run.finish({"beta": nl.beta})
    return 0


def _cmd_simulate_xi(args) -> int:
    run = _Run(args)
    J, beta = _parse_j_source(run.strict.sub("j_source"))
    record = run.strict.take("record_times", _float_list, default=None)
    params = SdeParams(
        a=run.strict.take("a", _as_float),
        Q=run.strict.take("Q", _as_float),
        dt=run.strict.take("dt", _as_float),
        n_paths=run.strict.take("n_paths", _as_int),
        record_times=tuple(record) if record else None,
    )
    run.strict.done()
    ens = simulate_xi(J, params, run.seed, threads=run.threads)
    _write_csv(
        run.outdir / "terminal.csv",
        "path_id,value",
        ((str(i), _fmt(v)) for i, v in enumerate(ens.terminal)),
    )
    if ens.snapshots is not None:
        rows = []
        for i in range(params.n_paths):
            for r, q in enumerate(record):
                rows.append((str(i), _fmt(q), _fmt(ens.snapshots[i, r])))
        _write_csv(run.outdir / "snapshots.csv", "path_id,q,value", rows)
    run.finish({"beta": beta})
    return 0


def _cmd_simulate_multipoint(args) -> int:
    run = _Run(args)
    J, beta = _parse_j_source(run.strict.sub("j_source"))
    d_raw = run.strict.take("d", None)
    if not isinstance(d_raw, list):
        raise ConfigError("d must be a matrix (list of lists); null means -inf")
    d = [
        [(-math.inf if v is None else _as_float(v)) for v in row] for row in d_raw
    ]
    n = len(d)
    params = SdeParams(
        a=run.strict.take("a", _as_float),
        Q=run.strict.take("Q", _as_float),
        dt=run.strict.take("dt", _as_float),
        n_paths=run.strict.take("n_paths", _as_int),
    )
    run.strict.done()
    cfg = UltrametricConfig(n=n, d=np.asarray(d), Q=params.Q)
    from .sde import branch_times

    inserted = branch_times(cfg, params.Q)
    ensembles = simulate_multipoint(J, cfg, params, run.seed, threads=run.threads)
    header = "path_id," + ",".join(f"coord_{j + 1}" for j in range(n))
    _write_csv(
        run.outdir / "terminal.csv",
        header,
        (
            (str(i), *(_fmt(ensembles[j].terminal[i]) for j in range(n)))
            for i in range(params.n_paths)
        ),
    )
    run.finish({"beta": beta, "branch_times_inserted": inserted})
    return 0


def _cmd_simulate_spde(args) -> int:
    run = _Run(args)
    cfg = _parse_spde(run.strict.sub("spde"))
    nl = _parse_sigma(run.strict.sub("sigma"))
    sample_q = run.strict.take("sample_q", _float_list, default=None)
    sample_times = run.strict.take("sample_times", _float_list, default=None)
    n_real = run.strict.take("n_realizations", _as_int, default=1)
    n_snap = run.strict.take("snapshot_realizations", _as_int, default=1)
    run.strict.done()
    if (sample_q is None) == (sample_times is None):
        raise ConfigError("give exactly one of sample_q or sample_times")
    if sample_q is not None:
        if cfg.attenuation != "paper":
            raise ConfigError("sample_q needs 'paper' attenuation (t = eps^(2-q))")
        sample_times = sorted(cfg.eps ** (2.0 - q) for q in sample_q)
    times = sorted(sample_times)
    moments_rows = []
    for r in range(n_real):
        snaps = simulate_spde(cfg, nl, times, run.seed.child(r))
        if r < n_snap:
            for ti, s in enumerate(snaps):
                rows = (
                    (str(ix), str(iy), _fmt(s.values[ix, iy]))
                    for ix in range(cfg.n_grid)
                    for iy in range(cfg.n_grid)
                )
                _write_csv(
                    run.outdir / f"field_r{r:04d}_t{ti:02d}.csv",
                    "x_index,y_index,value",
                    rows,
                )
        for s in snaps:
            moments_rows.append(
                (
                    str(r),
                    _fmt(s.t),
                    _fmt(float(np.mean(s.values))),
                    _fmt(float(np.mean(s.values**2))),
                    str(s.negative_entries),
                )
            )
    _write_csv(
        run.outdir / "moments.csv",
        "realization,t,mean_u,mean_u2,negative_entries",
        moments_rows,
    )
    run.finish({"times": times, "n_realizations": n_real})
    return 0


def _cmd_estimate_jeps(args) -> int:
    run = _Run(args)
    cfg = _parse_spde(run.strict.sub("spde"))
    nl = _parse_sigma(run.strict.sub("sigma"))
    q_list = run.strict.take("q_list", _float_list)
    a = run.strict.take("a", _as_float)
    n_real = run.strict.take("n_realizations", _as_int)
    run.strict.done()
    res = estimate_j_eps(cfg, nl, q_list, a, n_real, run.seed, threads=run.threads)
    _write_csv(
        run.outdir / "estimates.csv",
        "q,j_eps,stderr",
        ((_fmt(q), _fmt(j), _fmt(se)) for q, j, se in res),
    )
    run.finish()
    return 0


def _cmd_linear_oracle(args) -> int:
    run = _Run(args)
    beta = run.strict.take("beta", _as_float, default=None)
    a = run.strict.take("a", _as_float, default=None)
    Q = run.strict.take("Q", _as_float, default=None)
    d_values = run.strict.take("d_values", _float_list, default=None)
    grid_sub = run.strict.sub("grid", required=False)
    run.strict.done()
    beta = args.beta if args.beta is not None else beta
    a = args.a if args.a is not None else a
    Q = args.Q if args.Q is not None else Q
    if beta is None or a is None or Q is None:
        raise ConfigError("linear-oracle needs beta, a and Q (flags or config)")
    law = lognormal_params(a, Q, beta)
    payload = {
        "beta": beta,
        "a": a,
        "Q": Q,
        "s2": law.s2,
        "mu_log": law.mu_log,
        "jbar_Q": jbar(Q, beta),
    }
    if d_values is not None:
        payload["log_cov"] = {str(d): multipoint_cov(Q, beta, d) for d in d_values}
    if grid_sub is not None:
        spec = _parse_grid_spec(grid_sub)
        grid_to_csv(exact_linear_grid(spec, beta), run.outdir / "grid.csv")
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    with open(run.outdir / "oracle.json", "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    run.finish({"beta": beta})
    return 0


def _load_terminal_csv(path: str) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=float, ndmin=2)
    return data[:, 1]


def _cmd_compare(args) -> int:
    run = _Run(args)
    kind = run.strict.take("kind", _as_str)
    if kind == "grid":
        grid_csv = run.strict.take("grid_csv", _as_str)
        beta = run.strict.take("beta", _as_float)
        b_min = run.strict.take("b_min", _as_float, default=0.1)
        against = run.strict.sub("against")
        ref_kind = against.take("kind", _as_str, default="linear")
        ref_csv = against.take("path", _as_str, default=None)
        against.done()
        run.strict.done()
        grid = grid_from_csv(grid_csv, beta)
        if ref_kind == "linear":
            slopes = np.array([jbar(float(q), beta) for q in grid.q_nodes])
            ref = grid.with_values(slopes[:, None] * grid.b_nodes[None, :])
        elif ref_kind == "csv":
            if ref_csv is None:
                raise ConfigError("against.kind=csv needs against.path")
            ref = resample_grid(grid_from_csv(ref_csv, beta), grid.q_nodes, grid.b_nodes)
        else:
            raise ConfigError(f"unknown reference kind '{ref_kind}'")
        from .stats import compare_grids

        sup_rel, ynorm = compare_grids(grid, ref, b_min)
        report = {
            "kind": "grid",
            "sup_rel_error": sup_rel,
            "y_norm_distance": ynorm,
            "b_min": b_min,
        }
    elif kind == "multipoint":
        terminal_csv = run.strict.take("terminal_csv", _as_str)
        d = run.strict.take("d", _as_float)
        Q = run.strict.take("Q", _as_float)
        beta = run.strict.take("beta", _as_float)
        run.strict.done()
        data = np.loadtxt(terminal_csv, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] < 3:
            raise ConfigError(f"{terminal_csv}: expected path_id plus >= 2 coordinates")
        from .stats import empirical_log_cov

        cov, se, excl = empirical_log_cov(data[:, 1], data[:, 2])
        report = {
            "kind": "multipoint",
            "d": d,
            "log_cov": cov,
            "stderr": se,
            "excluded": excl,
            "oracle": multipoint_cov(Q, beta, d),
            "n": int(data.shape[0]),
        }
    elif kind == "ensemble":
        terminal_csv = run.strict.take("terminal_csv", _as_str)
        law_sub = run.strict.sub("law")
        mu_log = law_sub.take("mu_log", _as_float, default=None)
        s2 = law_sub.take("s2", _as_float, default=None)
        a = law_sub.take("a", _as_float, default=None)
        Q = law_sub.take("Q", _as_float, default=None)
        beta = law_sub.take("beta", _as_float, default=None)
        law_sub.done()
        orders = run.strict.take("orders", None, default=[1, 2])
        run.strict.done()
        if mu_log is not None and s2 is not None:
            from .linear_oracle import LogNormalLaw

            law = LogNormalLaw(mu_log=mu_log, s2=s2)
        elif a is not None and Q is not None and beta is not None:
            law = lognormal_params(a, Q, beta)
        else:
            raise ConfigError("law needs (mu_log, s2) or (a, Q, beta)")
        samples = _load_terminal_csv(terminal_csv)
        ks = ks_distance(samples, lambda x: lognormal_cdf(law, x))
        moments = empirical_moments(samples, [int(o) for o in orders])
        report = {
            "kind": "ensemble",
            "ks_distance": ks,
            "n": int(samples.size),
            "law": {"mu_log": law.mu_log, "s2": law.s2},
            "moments": [
                {
                    "order": m.order,
                    "estimate": m.estimate,
                    "stderr": m.stderr,
                }
                for m in moments
            ],
        }
    else:
        raise ConfigError(f"unknown compare kind '{kind}'")
    with open(run.outdir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    run.finish()
    return 0


def _cmd_ew_variance(args) -> int:
    run = _Run(args)
    cfg = _parse_spde(run.strict.sub("spde"))
    nl = _parse_sigma(run.strict.sub("sigma"))
    bump_sub = run.strict.sub("bump")
    center = bump_sub.take("center", _float_list)
    width = bump_sub.take("width", _as_float)
    bump_sub.done()
    if len(center) != 2:
        raise ConfigError("bump.center must be [x, y]")
    J, _ = _parse_j_source(run.strict.sub("j_source"))
    n_real = run.strict.take("n_realizations", _as_int)
    xi_paths = run.strict.take("xi_paths", _as_int, default=100_000)
    xi_dt = run.strict.take("xi_dt", _as_float, default=1e-3)
    run.strict.done()
    bump = GaussianBump(center=(center[0], center[1]), width=width)
    emp, pred = ew_variance_functional(
        cfg,
        nl,
        bump,
        J,
        n_real,
        run.seed,
        xi_paths=xi_paths,
        xi_dt=xi_dt,
        threads=run.threads,
    )
    report = {"empirical_variance": emp, "limit_prediction": pred}
    with open(run.outdir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    run.finish()
    return 0


_COMMANDS = {
    "solve-j": _cmd_solve_j,
    "solve-j-pde": _cmd_solve_j_pde,
    "simulate-xi": _cmd_simulate_xi,
    "simulate-multipoint": _cmd_simulate_multipoint,
    "simulate-spde": _cmd_simulate_spde,
    "estimate-jeps": _cmd_estimate_jeps,
    "linear-oracle": _cmd_linear_oracle,
    "compare": _cmd_compare,
    "ew-variance": _cmd_ew_variance,
}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fbheat", description="batch runner for the decoupling-function pipelines"
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--threads", type=int, default=None, help="cap worker count")
        p.add_argument("--output", type=str, default=None, help="override output_dir")
        if name == "linear-oracle":
            p.add_argument("--Q", type=float, default=None)
            p.add_argument("--beta", type=float, default=None)
            p.add_argument("--a", type=float, default=None)
    return ap


def run(argv) -> int:
    """Entry point with the documented exit-code contract."""
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
