"""Two independent routes to the decoupling function J(q, b).

Route 1 (``fixed_point_solve``): Monte Carlo Picard iteration of the map

    (Qg)(Q, a) = (1 / 2 sqrt(pi)) * sqrt( E sigma(Xi^g_{a,Q}(Q))^2 ),

where Xi^g solves d Xi = g(Q - q, Xi) dB from a. The map is a contraction
with factor 1/sqrt(2) in the weighted norm of :func:`core.y_norm_distance`,
so damped iterates converge geometrically until the Monte Carlo noise floor.

Route 2 (``direct_pde_solve``): finite differences for the quasilinear
degenerate equation satisfied by u = J^2,

    du/dq = (1/2) * u * d^2u/db^2,     u(0, b) = sigma(b)^2 / (4 pi),

marched either explicitly (with a CFL check each step) or semi-implicitly
with the coefficient lagged one step (unconditionally stable tridiagonal
solves). The b = 0 boundary is pinned to 0; the b = b_max boundary models
the linear tail of J, where d^2(J^2)/db^2 = 2 * (tail slope of J)^2.

The two routes share nothing beyond the grid type, which is what makes
their agreement a meaningful check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import partial

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

from .core import (
    ConfigError,
    DecouplingGrid,
    GridSpec,
    INV_TWO_SQRT_PI,
    Nonlinearity,
    SeededRng,
    StepSizeError,
    grid_rows_at,
    lip_bound,
    norm_weight_rate,
    sigma_eval,
    y_norm_distance,
)
from .parallel import run_tasks

# steps fused per numba call; bounds the increment buffer at ~64 MB for the
# largest acceptance batch (41 nodes x 2e4 paths)
_CHUNK_STEPS = 64


@dataclass(frozen=True)
class PicardParams:
    """Discretization of one Picard sweep of the Monte Carlo map.

    ``tol`` is the stopping threshold on the weighted-norm distance between
    successive iterates; None means 2x the estimated noise floor. ``damping``
    mixes the new sweep into the old iterate (1.0 = pure Picard); values
    below 1 damp limit cycles near the noise floor.
    """

    n_paths_per_node: int
    dt: float
    max_iters: int
    tol: float | None = None
    damping: float = 1.0

    def __post_init__(self) -> None:
        if self.n_paths_per_node < 2:
            raise ConfigError("need at least 2 paths per node")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol is not None and self.tol <= 0.0:
            raise ConfigError("tol must be positive (or None for automatic)")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")


class PdeScheme(str, Enum):
    EXPLICIT = "explicit"
    SEMI_IMPLICIT = "semi_implicit"


@dataclass(frozen=True)
class PdeParams:
    dq: float
    scheme: PdeScheme = PdeScheme.SEMI_IMPLICIT

    def __post_init__(self) -> None:
        if self.dq <= 0.0:
            raise ConfigError("dq must be positive")


@dataclass
class PicardDiagnostics:
    """Per-iteration weighted-norm distances plus the stopping context."""

    distances: list[float]
    noise_floor: float
    converged: bool
    iterations: int

    def to_json_dict(self) -> dict:
        return {
            "iterations": self.distances,
            "noise_floor": self.noise_floor,
            "converged": self.converged,
        }


@dataclass
class PdeDiagnostics:
    negative_clamps: int
    scheme: str
    dq: float
    max_u: float


@njit(cache=True, fastmath=True)
def _em_sweep(state, rows, slopes, z, sqrt_dts, inv_db, b_max):
    """Advance every (node, path) one chunk of Euler-Maruyama steps.

    state:   (n_nodes, n_paths), clamped to [0, inf) after each step
    rows:    (n_steps, n_b) diffusion coefficient sampled on the b-grid
    slopes:  (n_steps,) tail slope used beyond b_max
    z:       (n_steps, n_paths) standard normals, shared across nodes
    """
    n_steps, n_b = rows.shape
    n_nodes, n_paths = state.shape
    for k in range(n_steps):
        row = rows[k]
        s_ex = slopes[k]
        zk = z[k]
        sdt = sqrt_dts[k]
        top = row[n_b - 1]
        for i in range(n_nodes):
            si = state[i]
            for p in range(n_paths):
                x = si[p]
                if x >= b_max:
                    g = top + s_ex * (x - b_max)
                else:
                    pos = x * inv_db
                    j = int(pos)
                    g = row[j] + (row[j + 1] - row[j]) * (pos - j)
                x += g * sdt * zk[p]
                si[p] = 0.0 if x < 0.0 else x


def _step_sizes(Q: float, dt: float) -> np.ndarray:
    """Uniform dt steps over [0, Q], last step shortened to land on Q."""
    n_full = int(math.floor(Q / dt + 1e-9))
    rem = Q - n_full * dt
    if rem > 1e-12 * max(1.0, Q):
        return np.concatenate([np.full(n_full, dt), [rem]])
    return np.full(max(n_full, 1), Q / max(n_full, 1))


def _qmap_one_q(task, grid: DecouplingGrid, nl: Nonlinearity, params: PicardParams, rng: SeededRng):
    """Monte Carlo sweep for a single terminal time Q = q_nodes[iq].

    All b-nodes are batched into one state matrix and share the Gaussian
    increments (common random numbers): per-node bias and variance are
    unchanged, and each consumed value is a fixed function of
    (master_seed, node, path), so results never depend on scheduling.
    """
    iq, Q = task
    b_nodes = grid.b_nodes
    n_paths = params.n_paths_per_node
    gen = rng.generator(iq)
    state = np.repeat(b_nodes[:, None], n_paths, axis=1)
    steps = _step_sizes(float(Q), params.dt)
    t_starts = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    inv_db = 1.0 / (b_nodes[1] - b_nodes[0])
    for lo in range(0, steps.size, _CHUNK_STEPS):
        hi = min(lo + _CHUNK_STEPS, steps.size)
        rows, slopes = grid_rows_at(grid, Q - t_starts[lo:hi])
        z = gen.standard_normal((hi - lo, n_paths))
        _em_sweep(
            state, rows, slopes, z, np.sqrt(steps[lo:hi]), inv_db, grid.b_max
        )
    s2 = sigma_eval(nl, state) ** 2
    m = s2.mean(axis=1)
    values = INV_TWO_SQRT_PI * np.sqrt(m)
    se_m = np.sqrt(s2.var(axis=1, ddof=1) / n_paths)
    # delta method through sqrt: se(sqrt(m)) = se(m) / (2 sqrt(m))
    se = np.where(m > 0.0, INV_TWO_SQRT_PI * se_m / (2.0 * np.sqrt(np.maximum(m, 1e-300))), 0.0)
    return iq, values, se


def _check_uniform(nodes: np.ndarray, what: str) -> None:
    d = np.diff(nodes)
    if not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
        raise ConfigError(f"{what} must be uniformly spaced for the MC sweep")


def qmap_mc(
    g: DecouplingGrid,
    nl: Nonlinearity,
    spec: GridSpec,
    params: PicardParams,
    rng: SeededRng,
    *,
    threads: int | None = None,
    with_se: bool = False,
):
    """One application of the Monte Carlo map to the iterate g.

    The q = 0 row is exact (sigma(a) / 2 sqrt(pi), paths have no time to
    move); every other row is estimated from ``n_paths_per_node`` paths per
    node. With ``with_se`` the per-node delta-method standard errors are
    returned alongside the grid.
    """
    g.validate_z()
    q_nodes = spec.q_nodes()
    b_nodes = spec.b_nodes()
    if not (
        np.allclose(q_nodes, g.q_nodes, atol=1e-12)
        and np.allclose(b_nodes, g.b_nodes, atol=1e-12)
    ):
        raise ConfigError("iterate grid does not match the requested GridSpec")
    if params.dt > spec.q_step / 10.0 + 1e-15:
        raise ConfigError(
            f"dt={params.dt} too coarse: need dt <= q_step/10 = {spec.q_step / 10.0}"
        )
    _check_uniform(b_nodes, "b_nodes")

    values = np.empty((q_nodes.size, b_nodes.size))
    se = np.zeros_like(values)
    values[0] = INV_TWO_SQRT_PI * sigma_eval(nl, b_nodes)
    tasks = [(iq, q_nodes[iq]) for iq in range(1, q_nodes.size)]
    worker = partial(_qmap_one_q, grid=g, nl=nl, params=params, rng=rng)
    for iq, vals, row_se in run_tasks(worker, tasks, threads):
        values[iq] = vals
        se[iq] = row_se
    out = DecouplingGrid(q_nodes, b_nodes, values, nl.beta)
    return (out, se) if with_se else out


def project_to_Z(g: DecouplingGrid) -> DecouplingGrid:
    """Project a grid onto the contraction set.

    Clamps values to >= 0, zeroes the b = 0 column, and limits successive
    b-slopes to the Lipschitz bound by a single sweep upward from b = 0.
    The sweep is the running minimum of v - L*b, which realizes
    v'_j = min_{k <= j} (v_k + L (b_j - b_k)) in O(n).
    """
    v = np.maximum(g.values, 0.0)
    v[:, 0] = 0.0
    if g.beta == 0.0:
        return g.with_values(np.zeros_like(v))
    bounds = np.array([lip_bound(float(q), g.beta) for q in g.q_nodes])
    shifted = v - bounds[:, None] * g.b_nodes[None, :]
    v = np.minimum.accumulate(shifted, axis=1) + bounds[:, None] * g.b_nodes[None, :]
    return g.with_values(v)


def _noise_floor(
    se: np.ndarray, grid: DecouplingGrid, damping: float, n_draws: int = 256
) -> float:
    """Expected weighted-norm distance of two independent noise fields.

    The successive-iterate distance cannot fall below the weighted max over
    nodes of |eta - eta'| with eta ~ N(0, damping^2 * SE^2) per node; a small
    fixed-seed Monte Carlo estimates that max-statistic from the SE field.
    """
    rate = norm_weight_rate(grid.beta)
    w = np.exp(-rate * grid.q_nodes)[:, None]
    scale = (damping * se[:, 1:] * w / grid.b_nodes[None, 1:]).ravel()
    scale = scale[scale > 0.0]
    if scale.size == 0:
        return 0.0
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0x6F1D)))
    diffs = gen.standard_normal((n_draws, scale.size)) - gen.standard_normal(
        (n_draws, scale.size)
    )
    return float(np.mean(np.max(np.abs(diffs) * scale[None, :], axis=1)))


def fixed_point_solve(
    nl: Nonlinearity,
    spec: GridSpec,
    params: PicardParams,
    rng: SeededRng,
    *,
    threads: int | None = None,
) -> tuple[DecouplingGrid, PicardDiagnostics]:
    """Solve for J as the fixed point of the projected Monte Carlo map.

    Starts from g0(q, b) = sigma(b) / (2 sqrt(pi)), the exactly-known q = 0
    row extended constantly in q (g0 lies in the contraction set because
    Lip sigma / (2 sqrt(pi)) is the q = 0 Lipschitz bound). Each iteration
    uses fresh randomness, so distances flatten at the noise floor instead
    of contracting forever against frozen noise.
    """
    q_nodes = spec.q_nodes()
    b_nodes = spec.b_nodes()
    g0_row = INV_TWO_SQRT_PI * sigma_eval(nl, b_nodes)
    g = DecouplingGrid(
        q_nodes, b_nodes, np.repeat(g0_row[None, :], q_nodes.size, axis=0), nl.beta
    )
    distances: list[float] = []
    floor = 0.0
    converged = False
    for it in range(params.max_iters):
        swept, se = qmap_mc(
            g, nl, spec, params, rng.child(it), threads=threads, with_se=True
        )
        mixed = (1.0 - params.damping) * g.values + params.damping * swept.values
        g_next = project_to_Z(g.with_values(mixed))
        d = y_norm_distance(g_next, g)
        distances.append(d)
        floor = _noise_floor(se, g, params.damping)
        tol = params.tol if params.tol is not None else max(2.0 * floor, 1e-15)
        g = g_next
        if d <= tol:
            converged = True
            break
    diag = PicardDiagnostics(
        distances=distances,
        noise_floor=floor,
        converged=converged,
        iterations=len(distances),
    )
    return g, diag


def direct_pde_solve(
    nl: Nonlinearity, spec: GridSpec, params: PdeParams
) -> tuple[DecouplingGrid, PdeDiagnostics]:
    """March u = J^2 forward in q and return J = sqrt(u) on the spec grid.

    ``dq`` must divide ``q_step`` exactly so grid rows are sampled without
    interpolation in q. The explicit scheme enforces its CFL-type bound
    dq <= b_step^2 / (2 max u) at every step; the semi-implicit scheme lags
    the coefficient and solves one tridiagonal system per step.
    """
    q_nodes = spec.q_nodes()
    b = spec.b_nodes()
    db = float(b[1] - b[0])
    n_sub = round(spec.q_step / params.dq)
    if n_sub < 1 or abs(n_sub * params.dq - spec.q_step) > 1e-9 * spec.q_step:
        raise ConfigError(
            f"dq={params.dq} must divide q_step={spec.q_step} exactly"
        )
    dq = spec.q_step / n_sub

    u = sigma_eval(nl, b) ** 2 / (4.0 * math.pi)
    rows = np.empty((q_nodes.size, b.size))
    rows[0] = np.sqrt(u)
    clamps = 0
    max_u = float(u.max())

    for row_i in range(1, q_nodes.size):
        for sub in range(n_sub):
            u_max = float(u.max())
            max_u = max(max_u, u_max)
            sqrt_u = np.sqrt(u)
            tail_slope = (sqrt_u[-1] - sqrt_u[-2]) / db
            ts2 = tail_slope * tail_slope
            if params.scheme is PdeScheme.EXPLICIT:
                if u_max > 0.0 and dq > db * db / (2.0 * u_max):
                    q_here = q_nodes[row_i - 1] + sub * dq
                    raise StepSizeError(
                        f"explicit CFL violated at q={q_here:.6g}: "
                        f"dq={dq:.3g} > b_step^2/(2 max u) = "
                        f"{db * db / (2.0 * u_max):.3g}"
                    )
                lap = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (db * db)
                new = u.copy()
                new[1:-1] = u[1:-1] + dq * 0.5 * u[1:-1] * lap
                new[-1] = u[-1] * (1.0 + dq * ts2)
            else:
                if dq * ts2 >= 0.5:
                    raise StepSizeError(
                        f"semi-implicit tail update unstable: dq*slope^2 = {dq * ts2:.3g}"
                    )
                new = np.empty_like(u)
                new[0] = 0.0
                new[-1] = u[-1] / (1.0 - dq * ts2)
                c = 0.5 * dq * u[1:-1] / (db * db)
                ab = np.zeros((3, b.size - 2))
                ab[0, 1:] = -c[:-1]  # super-diagonal
                ab[1] = 1.0 + 2.0 * c
                ab[2, :-1] = -c[1:]  # sub-diagonal
                rhs = u[1:-1].copy()
                rhs[-1] += c[-1] * new[-1]
                new[1:-1] = solve_banded((1, 1), ab, rhs)
            neg = new < 0.0
            if np.any(neg):
                clamps += int(np.sum(neg))
                new[neg] = 0.0
            u = new
        rows[row_i] = np.sqrt(u)

    grid = DecouplingGrid(q_nodes, b, rows, nl.beta)
    diag = PdeDiagnostics(
        negative_clamps=clamps, scheme=params.scheme.value, dq=dq, max_u=max_u
    )
    return grid, diag
