"""Path simulation of the limiting diffusions.

``simulate_xi`` integrates the one-point diffusion

    d Xi(q) = J(Q - q, Xi(q)) dB(q),    Xi(0) = a,

by Euler-Maruyama with a post-step clamp at zero (the continuum solution is
positive almost surely; the clamp is the cheapest positivity-preserving
discretization). ``simulate_multipoint`` integrates the branching family

    d Gamma_j(q) = J(Q - q, Gamma_j(q)) dB_{i(j, (Q-q)/2)}(q),

where the driver index i(j, .) is read off an ultrametric distance matrix:
coordinates whose drivers coincide consume the identical Gaussian increment,
so they stay exactly stuck together until their branch time Q - 2*d_ij, and
evolve independently afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .core import (
    ConfigError,
    DecouplingGrid,
    DomainError,
    SeededRng,
    grid_rows_at,
    j_eval,
)
from .parallel import run_tasks

# fixed path-chunk size: chunk boundaries (and hence every consumed random
# number) depend on params only, never on the worker count
_CHUNK_PATHS = 32768


@dataclass(frozen=True)
class SdeParams:
    a: float
    Q: float
    dt: float
    n_paths: int
    record_times: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.a < 0.0:
            raise ConfigError("a must be nonnegative")
        if not 0.0 <= self.Q <= 2.0:
            raise ConfigError(f"Q={self.Q} outside [0, 2]")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.Q > 0.0 and self.dt > self.Q / 100.0 + 1e-15:
            raise ConfigError(f"dt={self.dt} too coarse: need dt <= Q/100")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.record_times is not None:
            rt = np.asarray(self.record_times, dtype=float)
            if rt.size and (np.any(np.diff(rt) <= 0.0) or rt[0] < 0.0 or rt[-1] > self.Q):
                raise ConfigError("record_times must be ascending within [0, Q]")


@dataclass(frozen=True)
class PathEnsemble:
    """Terminal samples (and optional snapshots) of one simulated family."""

    terminal: np.ndarray
    snapshots: np.ndarray | None
    seed: SeededRng
    params: SdeParams

    def __post_init__(self) -> None:
        t = np.asarray(self.terminal, dtype=float)
        if t.shape != (self.params.n_paths,):
            raise ConfigError(
                f"terminal has {t.shape}, expected ({self.params.n_paths},)"
            )
        if np.any(t < 0.0):
            raise ConfigError("terminal samples must be nonnegative")
        t.setflags(write=False)
        object.__setattr__(self, "terminal", t)


def _merge_times(Q: float, dt: float, extra) -> np.ndarray:
    """Step-boundary times: uniform dt ticks, required extras, and Q itself."""
    n = int(math.floor(Q / dt + 1e-9))
    ticks = np.arange(n + 1) * dt
    allt = np.concatenate([ticks, np.asarray(extra, dtype=float), [Q]])
    allt = np.unique(np.clip(allt, 0.0, Q))
    # collapse numerically-duplicate boundaries (e.g. 500*1e-3 vs 0.5)
    keep = np.concatenate([[True], np.diff(allt) > 1e-12 * max(1.0, Q)])
    return allt[keep]


def _record_indices(times: np.ndarray, record_times) -> dict[int, int]:
    out: dict[int, int] = {}
    for r, t in enumerate(record_times):
        k = int(np.argmin(np.abs(times - t)))
        out[k] = r
    return out


def _row_diffusion(x, row, slope, b_nodes, b_max):
    g = np.interp(x, b_nodes, row)
    over = x > b_max
    if np.any(over):
        g = np.where(over, row[-1] + slope * (x - b_max), g)
    return g


def _xi_chunk(task, J: DecouplingGrid, p: SdeParams, rng: SeededRng, times, rows, slopes, rec_idx):
    chunk_id, n_chunk = task
    gen = rng.generator(chunk_id)
    x = np.full(n_chunk, float(p.a))
    n_rec = len(rec_idx)
    snaps = np.empty((n_chunk, n_rec)) if n_rec else None
    if 0 in rec_idx:
        snaps[:, rec_idx[0]] = x
    for k in range(times.size - 1):
        h = times[k + 1] - times[k]
        z = gen.standard_normal(n_chunk)
        g = _row_diffusion(x, rows[k], slopes[k], J.b_nodes, J.b_max)
        x = np.maximum(0.0, x + g * math.sqrt(h) * z)
        if (k + 1) in rec_idx:
            snaps[:, rec_idx[k + 1]] = x
    return x, snaps


def simulate_xi(
    J: DecouplingGrid, p: SdeParams, rng: SeededRng, *, threads: int | None = None
) -> PathEnsemble:
    """Sample the one-point diffusion; terminal values, optional snapshots."""
    if p.Q > J.q_nodes[-1] + 1e-12:
        raise DomainError(f"Q={p.Q} beyond the grid's q-range {J.q_nodes[-1]}")
    record = list(p.record_times) if p.record_times is not None else []
    times = _merge_times(p.Q, p.dt, record)
    rec_idx = _record_indices(times, record)
    rows, slopes = grid_rows_at(J, p.Q - times[:-1]) if times.size > 1 else (
        np.zeros((0, J.b_nodes.size)),
        np.zeros(0),
    )
    sizes = [_CHUNK_PATHS] * (p.n_paths // _CHUNK_PATHS)
    if p.n_paths % _CHUNK_PATHS:
        sizes.append(p.n_paths % _CHUNK_PATHS)
    tasks = [(c, n) for c, n in enumerate(sizes)]
    worker = partial(
        _xi_chunk, J=J, p=p, rng=rng, times=times, rows=rows, slopes=slopes, rec_idx=rec_idx
    )
    parts = run_tasks(worker, tasks, threads)
    terminal = np.concatenate([t for t, _ in parts])
    snapshots = (
        np.concatenate([s for _, s in parts], axis=0) if rec_idx else None
    )
    return PathEnsemble(terminal=terminal, snapshots=snapshots, seed=rng, params=p)


def y_process(J: DecouplingGrid, x_snapshots, q_times, Q: float):
    """Backward component along recorded forward states: Y = J^2(Q - q, X).

    ``x_snapshots`` is (n_paths, n_times) or a single path (n_times,);
    returns the matching array of Y values.
    """
    x = np.asarray(x_snapshots, dtype=float)
    qs = np.atleast_1d(np.asarray(q_times, dtype=float))
    squeeze = x.ndim == 1 and qs.size == x.size
    if x.ndim == 1 and qs.size == 1 and x.size != 1:
        x2 = x[:, None]  # many paths observed at a single time
    else:
        x2 = np.atleast_2d(x)
    if x2.shape[1] != qs.size:
        raise ConfigError("snapshot columns must match q_times")
    out = np.empty_like(x2)
    for i, q in enumerate(qs):
        out[:, i] = j_eval(J, Q - q, x2[:, i]) ** 2
    return out[0] if squeeze else out


@dataclass(frozen=True)
class UltrametricConfig:
    """Exponential-scale distances steering the branching family.

    ``d`` is symmetric with the diagonal pinned to the -inf sentinel (the
    constructor pins it); off-diagonal entries may be any real or -inf.
    """

    n: int
    d: np.ndarray
    Q: float

    def __post_init__(self) -> None:
        d = np.array(self.d, dtype=float)
        if d.shape != (self.n, self.n):
            raise ConfigError(f"d has shape {d.shape}, expected ({self.n}, {self.n})")
        if not 0.0 <= self.Q <= 2.0:
            raise ConfigError(f"Q={self.Q} outside [0, 2]")
        np.fill_diagonal(d, -math.inf)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)


@dataclass(frozen=True)
class UltrametricReport:
    ok: bool
    asymmetric_pairs: tuple[tuple[int, int], ...]
    first_violation: tuple[int, int, int] | None

    def __str__(self) -> str:
        if self.ok:
            return "ultrametric: ok"
        parts = []
        if self.asymmetric_pairs:
            parts.append(f"asymmetric pairs {list(self.asymmetric_pairs)}")
        if self.first_violation:
            i, j, k = self.first_violation
            parts.append(
                f"d[{i},{k}] > max(d[{i},{j}], d[{j},{k}]) violates ultrametricity"
            )
        return "ultrametric: " + "; ".join(parts)


def validate_ultrametric(cfg: UltrametricConfig) -> UltrametricReport:
    """Check symmetry and d_ik <= max(d_ij, d_jk) over all triples."""
    d = cfg.d
    asym = [
        (i, j)
        for i in range(cfg.n)
        for j in range(i + 1, cfg.n)
        if d[i, j] != d[j, i]
    ]
    first = None
    for i in range(cfg.n):
        for j in range(cfg.n):
            for k in range(cfg.n):
                if d[i, k] > max(d[i, j], d[j, k]) + 1e-12:
                    first = (i, j, k)
                    break
            if first:
                break
        if first:
            break
    return UltrametricReport(
        ok=not asym and first is None,
        asymmetric_pairs=tuple(asym),
        first_violation=first,
    )


def driver_index(cfg: UltrametricConfig, j: int, q: float) -> int:
    """Smallest i with d_ij < q (0-based); d_jj = -inf guarantees i <= j.

    The branching dynamics supply the already-transformed threshold
    q = (Q - time)/2; this helper does not re-transform.
    """
    hits = np.nonzero(cfg.d[:, j] < q)[0]
    return int(hits[0])


def branch_times(cfg: UltrametricConfig, Q: float) -> list[float]:
    """Times q* = Q - 2 d_ij in (0, Q) where some pair of drivers splits."""
    out = set()
    for i in range(cfg.n):
        for j in range(i + 1, cfg.n):
            dij = cfg.d[i, j]
            if math.isfinite(dij):
                q_star = Q - 2.0 * dij
                if 0.0 < q_star < Q:
                    out.add(q_star)
    return sorted(out)


def _multipoint_chunk(task, J, cfg, p, rng, times, rows, slopes, drivers, rec_idx):
    chunk_id, n_chunk = task
    gen = rng.generator(chunk_id)
    n = cfg.n
    x = np.full((n, n_chunk), float(p.a))
    n_rec = len(rec_idx)
    snaps = np.empty((n, n_chunk, n_rec)) if n_rec else None
    if 0 in rec_idx:
        snaps[:, :, rec_idx[0]] = x
    for k in range(times.size - 1):
        h = times[k + 1] - times[k]
        sdt = math.sqrt(h)
        # one increment per independent stream; coordinates sharing a driver
        # receive the identical value, which keeps pre-branch paths exact
        z = gen.standard_normal((n, n_chunk))
        for j in range(n):
            g = _row_diffusion(x[j], rows[k], slopes[k], J.b_nodes, J.b_max)
            x[j] = np.maximum(0.0, x[j] + g * sdt * z[drivers[k, j]])
        if (k + 1) in rec_idx:
            snaps[:, :, rec_idx[k + 1]] = x
    return x, snaps


def simulate_multipoint(
    J: DecouplingGrid,
    cfg: UltrametricConfig,
    p: SdeParams,
    rng: SeededRng,
    *,
    threads: int | None = None,
) -> list[PathEnsemble]:
    """Jointly sample the branching family; one ensemble per coordinate.

    Exact branch times Q - 2 d_ij are inserted into the time grid so driver
    switches never land between steps (an O(dt) covariance bias otherwise).
    """
    report = validate_ultrametric(cfg)
    if not report.ok:
        raise DomainError(str(report))
    if abs(cfg.Q - p.Q) > 1e-12:
        raise ConfigError(f"cfg.Q={cfg.Q} and params.Q={p.Q} disagree")
    if p.Q > J.q_nodes[-1] + 1e-12:
        raise DomainError(f"Q={p.Q} beyond the grid's q-range {J.q_nodes[-1]}")
    record = list(p.record_times) if p.record_times is not None else []
    times = _merge_times(p.Q, p.dt, record + branch_times(cfg, p.Q))
    rec_idx = _record_indices(times, record)
    rows, slopes = grid_rows_at(J, p.Q - times[:-1]) if times.size > 1 else (
        np.zeros((0, J.b_nodes.size)),
        np.zeros(0),
    )
    drivers = np.empty((max(times.size - 1, 0), cfg.n), dtype=np.int64)
    for k in range(times.size - 1):
        thr = (p.Q - times[k]) / 2.0
        for j in range(cfg.n):
            drivers[k, j] = driver_index(cfg, j, thr)
    sizes = [_CHUNK_PATHS] * (p.n_paths // _CHUNK_PATHS)
    if p.n_paths % _CHUNK_PATHS:
        sizes.append(p.n_paths % _CHUNK_PATHS)
    tasks = [(c, n) for c, n in enumerate(sizes)]
    worker = partial(
        _multipoint_chunk,
        J=J,
        cfg=cfg,
        p=p,
        rng=rng,
        times=times,
        rows=rows,
        slopes=slopes,
        drivers=drivers,
        rec_idx=rec_idx,
    )
    parts = run_tasks(worker, tasks, threads)
    ensembles = []
    for j in range(cfg.n):
        terminal = np.concatenate([t[j] for t, _ in parts])
        snaps = (
            np.concatenate([s[j] for _, s in parts], axis=0) if rec_idx else None
        )
        ensembles.append(
            PathEnsemble(terminal=terminal, snapshots=snaps, seed=rng, params=p)
        )
    return ensembles
