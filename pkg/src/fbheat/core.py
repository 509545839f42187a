"""Domain types shared by every solver: nonlinearities, tabulated decoupling
grids, seeded random streams, and the weighted norm used for convergence
control.

Conventions used throughout the package:

* ``q`` is the macroscopic time variable, restricted to [0, 2].
* ``b`` (or ``a``) is the state/initial-value variable, restricted to [0, inf).
* A decoupling grid stores ``J(q_i, b_j)`` row-major over ``q`` then ``b``.
* ``beta`` is the Lipschitz constant of the nonlinearity; the subcritical
  regime is ``beta < sqrt(2*pi)`` and everything here refuses to run outside
  it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

BETA_CRITICAL = math.sqrt(2.0 * math.pi)
INV_TWO_SQRT_PI = 1.0 / (2.0 * math.sqrt(math.pi))


class DomainError(ValueError):
    """An argument lies outside an operation's mathematical domain."""


class SupercriticalError(DomainError):
    """beta >= sqrt(2*pi): no contraction, no nontrivial limit."""


class ShapeError(ValueError):
    """Grids or sample arrays that were required to share shape do not."""


class ConfigError(ValueError):
    """A configuration object violates one of its invariants."""


class StepSizeError(RuntimeError):
    """A time step violates a stability bound."""


class NumericalError(RuntimeError):
    """A simulation blew up or otherwise lost numerical meaning."""


class SigmaKind(str, Enum):
    LINEAR = "linear"
    SATURATING = "saturating"
    TABLE = "table"


def _check_subcritical(beta: float) -> None:
    if not beta < BETA_CRITICAL:
        raise SupercriticalError(
            f"beta={beta} is supercritical: the Lipschitz constant must be "
            f"< sqrt(2*pi) = {BETA_CRITICAL:.6f}"
        )


@dataclass(frozen=True)
class Nonlinearity:
    """A Lipschitz nonlinearity sigma: [0, inf) -> [0, inf) with sigma(0)=0.

    ``beta`` is the Lipschitz constant. Three kinds are supported:

    * ``linear``:     sigma(u) = beta * u
    * ``saturating``: sigma(u) = beta * (1 - exp(-u))
    * ``table``:      piecewise-linear through ``table`` knots, constant
                      beyond the last knot.

    Construction rejects beta >= sqrt(2*pi); beta = 0 is accepted as the
    degenerate case (sigma identically 0, everything downstream freezes).
    """

    kind: SigmaKind
    beta: float
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.beta < 0.0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")
        _check_subcritical(self.beta)
        if self.kind is SigmaKind.TABLE:
            if not self.table or len(self.table) < 2:
                raise ConfigError("table kind needs at least two (u, sigma) knots")
            us = np.asarray([k[0] for k in self.table], dtype=float)
            ss = np.asarray([k[1] for k in self.table], dtype=float)
            if us[0] != 0.0 or ss[0] != 0.0:
                raise ConfigError("table must start at the knot (0, 0)")
            if np.any(np.diff(us) <= 0.0):
                raise ConfigError("table u-knots must be strictly ascending")
            if np.any(ss < 0.0):
                raise ConfigError("table sigma values must be nonnegative")
            slopes = np.abs(np.diff(ss) / np.diff(us))
            if np.any(slopes > self.beta * (1.0 + 1e-12)):
                raise ConfigError(
                    f"table slope {slopes.max():.6g} exceeds the declared "
                    f"Lipschitz constant beta={self.beta}"
                )
        elif self.table is not None:
            raise ConfigError(f"kind={self.kind.value} does not take a table")

    @classmethod
    def linear(cls, beta: float) -> "Nonlinearity":
        return cls(SigmaKind.LINEAR, beta)

    @classmethod
    def saturating(cls, beta: float) -> "Nonlinearity":
        return cls(SigmaKind.SATURATING, beta)

    @classmethod
    def from_table(cls, knots, beta: float) -> "Nonlinearity":
        return cls(SigmaKind.TABLE, beta, tuple((float(u), float(s)) for u, s in knots))


def sigma_eval(nl: Nonlinearity, u):
    """Evaluate sigma(u) for a scalar or array of nonnegative u."""
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("sigma is only defined for u >= 0")
    if nl.kind is SigmaKind.LINEAR:
        out = nl.beta * arr
    elif nl.kind is SigmaKind.SATURATING:
        out = nl.beta * -np.expm1(-arr)
    else:
        us = np.asarray([k[0] for k in nl.table], dtype=float)
        ss = np.asarray([k[1] for k in nl.table], dtype=float)
        # np.interp extends constantly on both sides; the left end is (0, 0).
        out = np.interp(arr, us, ss)
    return float(out) if np.isscalar(u) or np.ndim(u) == 0 else out


@dataclass(frozen=True)
class SeededRng:
    """A named random stream: (master_seed, stream_id) -> reproducible bytes.

    Independent substreams are derived with structured subkeys so that the
    value consumed by (node, path, iteration, ...) never depends on how work
    is scheduled across workers.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self, *subkey: int) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.stream_id, *subkey)
        )
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, key: int) -> "SeededRng":
        """Derive an independent stream; 64-bit hash of (stream_id, key)."""
        return SeededRng(self.master_seed, _mix64(_mix64(self.stream_id) ^ (key + 1)))


_M64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    # splitmix64 finalizer: a bijective 64-bit scramble
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor-grid layout for a decoupling grid over [0,2] x [0,b_max].

    Size b_max to at least 4x the largest initial value the grid will serve;
    beyond b_max evaluation falls back to the clamped linear tail.
    """

    q_step: float
    b_max: float
    b_step: float

    def __post_init__(self) -> None:
        if self.q_step <= 0.0 or self.b_step <= 0.0 or self.b_max <= 0.0:
            raise ConfigError("q_step, b_step and b_max must be positive")
        if self.q_step > 0.1 + 1e-12:
            raise ConfigError(f"q_step={self.q_step} too coarse; need q_step <= 0.1")
        if abs(round(2.0 / self.q_step) - 2.0 / self.q_step) > 1e-9:
            raise ConfigError("q_step must divide the q-range [0, 2] evenly")
        if abs(round(self.b_max / self.b_step) - self.b_max / self.b_step) > 1e-9:
            raise ConfigError("b_step must divide b_max evenly")

    def q_nodes(self) -> np.ndarray:
        n = round(2.0 / self.q_step)
        return np.linspace(0.0, 2.0, n + 1)

    def b_nodes(self) -> np.ndarray:
        n = round(self.b_max / self.b_step)
        return np.linspace(0.0, self.b_max, n + 1)


def lip_bound(q: float, beta: float) -> float:
    """Lipschitz bound (4*pi/beta^2 - q)^(-1/2) for J(q, .) in b."""
    _check_subcritical(beta)
    if beta <= 0.0:
        raise DomainError("lip_bound needs beta > 0")
    if q < 0.0 or q > 2.0:
        raise DomainError(f"q={q} outside [0, 2]")
    x = 4.0 * math.pi / beta**2 - q
    if x <= 0.0:  # unreachable when beta is subcritical and q <= 2
        raise DomainError(f"singular Lipschitz bound: 4*pi/beta^2 <= q ({q})")
    return x**-0.5


def norm_weight_rate(beta: float) -> float:
    """Exponential rate R(beta) = 2*beta^2*(x/(x-2))^3, x = 4*pi/beta^2.

    The weighted norm max exp(-R*q)*|g(q,b)|/b is the one in which the
    fixed-point map contracts with factor 1/sqrt(2).
    """
    _check_subcritical(beta)
    if beta == 0.0:
        return 0.0
    x = 4.0 * math.pi / beta**2
    return 2.0 * beta**2 * (x / (x - 2.0)) ** 3


@dataclass(frozen=True)
class DecouplingGrid:
    """Tabulated J(q, b) >= 0 on a tensor grid, built for one beta.

    Construction validates shape and node layout only; membership in the
    contraction set (b=0 column zero, nonnegative, discretely Lipschitz) is
    checked separately by :meth:`validate_z` because raw Monte Carlo output
    legitimately violates it before projection.
    """

    q_nodes: np.ndarray
    b_nodes: np.ndarray
    values: np.ndarray
    beta: float

    def __post_init__(self) -> None:
        q = np.ascontiguousarray(np.asarray(self.q_nodes, dtype=float))
        b = np.ascontiguousarray(np.asarray(self.b_nodes, dtype=float))
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        _check_subcritical(self.beta)
        if self.beta < 0.0:
            raise DomainError("beta must be nonnegative")
        if q.ndim != 1 or b.ndim != 1 or v.shape != (q.size, b.size):
            raise ShapeError(
                f"values shape {v.shape} does not match ({q.size}, {b.size})"
            )
        if q.size < 2 or b.size < 2:
            raise ShapeError("need at least two nodes per axis")
        if np.any(np.diff(q) <= 0.0) or np.any(np.diff(b) <= 0.0):
            raise ShapeError("grid nodes must be strictly ascending")
        if q[0] < -1e-12 or q[-1] > 2.0 + 1e-12:
            raise DomainError("q_nodes must lie in [0, 2]")
        if b[0] != 0.0:
            raise DomainError("b_nodes must start at 0")
        for arr in (q, b, v):
            arr.setflags(write=False)
        object.__setattr__(self, "q_nodes", q)
        object.__setattr__(self, "b_nodes", b)
        object.__setattr__(self, "values", v)

    @property
    def b_max(self) -> float:
        return float(self.b_nodes[-1])

    def with_values(self, values: np.ndarray) -> "DecouplingGrid":
        return DecouplingGrid(self.q_nodes, self.b_nodes, values, self.beta)

    def validate_z(self, grid_tol: float = 0.02) -> None:
        """Raise unless the grid lies in the contraction set.

        The discrete Lipschitz check allows a ``grid_tol`` (default 2%)
        slack: finite differencing an exactly-Lipschitz function picks up
        O(b_step) of apparent excess.
        """
        if np.any(self.values < 0.0):
            raise DomainError("grid has negative values")
        if np.any(self.values[:, 0] != 0.0):
            raise DomainError("grid violates J(q, 0) = 0")
        if self.beta == 0.0:
            if np.any(self.values != 0.0):
                raise DomainError("beta=0 grid must be identically zero")
            return
        slopes = np.abs(np.diff(self.values, axis=1)) / np.diff(self.b_nodes)
        bounds = np.array([lip_bound(q, self.beta) for q in self.q_nodes])
        if np.any(slopes > bounds[:, None] * (1.0 + grid_tol)):
            iq, jb = np.unravel_index(
                np.argmax(slopes / bounds[:, None]), slopes.shape
            )
            raise DomainError(
                f"discrete Lipschitz violation at q={self.q_nodes[iq]:.6g}, "
                f"b={self.b_nodes[jb]:.6g}: slope {slopes[iq, jb]:.6g} > "
                f"bound {bounds[iq]:.6g} (tol {grid_tol})"
            )


def _q_bracket(grid: DecouplingGrid, q: float) -> tuple[int, float]:
    q0, q1 = grid.q_nodes[0], grid.q_nodes[-1]
    if q < q0 - 1e-12 or q > q1 + 1e-12:
        raise DomainError(f"q={q} outside grid range [{q0}, {q1}]")
    q = min(max(q, q0), q1)
    iq = int(np.searchsorted(grid.q_nodes, q, side="right")) - 1
    iq = min(max(iq, 0), grid.q_nodes.size - 2)
    w = (q - grid.q_nodes[iq]) / (grid.q_nodes[iq + 1] - grid.q_nodes[iq])
    return iq, float(w)


def grid_row_at(grid: DecouplingGrid, q: float) -> tuple[np.ndarray, float]:
    """Interpolated b-row of the grid at time q, plus the tail slope.

    The tail slope is what :func:`j_eval` uses beyond b_max: the slope of the
    last two b-nodes clamped into [0, lip_bound(q, beta)]. Hot loops call
    this once per time step and then evaluate the row many times.
    """
    iq, w = _q_bracket(grid, q)
    row = (1.0 - w) * grid.values[iq] + w * grid.values[iq + 1]
    db = grid.b_nodes[-1] - grid.b_nodes[-2]
    slope = (row[-1] - row[-2]) / db
    if grid.beta > 0.0:
        slope = min(max(slope, 0.0), lip_bound(q, grid.beta))
    else:
        slope = 0.0
    return row, float(slope)


def grid_rows_at(grid: DecouplingGrid, q_values) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`grid_row_at`: rows (m, nb) and tail slopes (m,).

    Time-stepping loops call this once with the whole step schedule instead
    of interpolating the grid inside the hot loop.
    """
    q = np.asarray(q_values, dtype=float)
    q0, q1 = grid.q_nodes[0], grid.q_nodes[-1]
    if np.any(q < q0 - 1e-12) or np.any(q > q1 + 1e-12):
        raise DomainError(f"q values outside grid range [{q0}, {q1}]")
    qc = np.clip(q, q0, q1)
    iq = np.clip(
        np.searchsorted(grid.q_nodes, qc, side="right") - 1, 0, grid.q_nodes.size - 2
    )
    w = (qc - grid.q_nodes[iq]) / (grid.q_nodes[iq + 1] - grid.q_nodes[iq])
    rows = (1.0 - w)[:, None] * grid.values[iq] + w[:, None] * grid.values[iq + 1]
    db = grid.b_nodes[-1] - grid.b_nodes[-2]
    raw = (rows[:, -1] - rows[:, -2]) / db
    if grid.beta > 0.0:
        bounds = (4.0 * math.pi / grid.beta**2 - qc) ** -0.5
        slopes = np.clip(raw, 0.0, bounds)
    else:
        slopes = np.zeros_like(raw)
    return rows, slopes


def j_eval(grid: DecouplingGrid, q: float, b):
    """Evaluate J(q, b) by bilinear interpolation, linear tail beyond b_max.

    ``b`` may be a scalar or an array; q must lie inside the grid's q-range.
    """
    row, slope = grid_row_at(grid, q)
    barr = np.asarray(b, dtype=float)
    if np.any(barr < 0.0):
        raise DomainError("b must be nonnegative")
    inside = np.interp(barr, grid.b_nodes, row)
    out = np.where(
        barr > grid.b_max, row[-1] + slope * (barr - grid.b_max), inside
    )
    return float(out) if np.ndim(b) == 0 else out


def resample_grid(grid: DecouplingGrid, q_nodes, b_nodes) -> DecouplingGrid:
    """Evaluate the grid on new nodes (bilinear inside, linear tail beyond)."""
    qn = np.asarray(q_nodes, dtype=float)
    bn = np.asarray(b_nodes, dtype=float)
    rows, slopes = grid_rows_at(grid, qn)
    values = np.empty((qn.size, bn.size))
    beyond = bn > grid.b_max
    for i in range(qn.size):
        values[i] = np.interp(bn, grid.b_nodes, rows[i])
        if np.any(beyond):
            values[i, beyond] = rows[i, -1] + slopes[i] * (bn[beyond] - grid.b_max)
    return DecouplingGrid(qn, bn, values, grid.beta)


def _require_same_layout(g1: DecouplingGrid, g2: DecouplingGrid) -> None:
    if g1.values.shape != g2.values.shape:
        raise ShapeError(f"grid shapes differ: {g1.values.shape} vs {g2.values.shape}")
    if not (
        np.allclose(g1.q_nodes, g2.q_nodes, atol=1e-12)
        and np.allclose(g1.b_nodes, g2.b_nodes, atol=1e-12)
    ):
        raise ShapeError("grids do not share nodes")
    if g1.beta != g2.beta:
        raise ShapeError(f"grids built for different beta: {g1.beta} vs {g2.beta}")


def y_norm_distance(g1: DecouplingGrid, g2: DecouplingGrid) -> float:
    """Weighted sup distance max_{b>0} exp(-R(beta)*q) * |g1-g2|(q,b) / b."""
    _require_same_layout(g1, g2)
    rate = norm_weight_rate(g1.beta)
    w = np.exp(-rate * g1.q_nodes)[:, None]
    diff = np.abs(g1.values[:, 1:] - g2.values[:, 1:]) / g1.b_nodes[None, 1:]
    return float(np.max(w * diff))


def grid_to_csv(grid: DecouplingGrid, path) -> None:
    """Write the grid as CSV ``q,b,J`` row-major over q then b, 17 sig digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("q,b,J\n")
        for i, q in enumerate(grid.q_nodes):
            for j, b in enumerate(grid.b_nodes):
                fh.write(f"{q:.17g},{b:.17g},{grid.values[i, j]:.17g}\n")


def grid_from_csv(path, beta: float) -> DecouplingGrid:
    """Read a grid written by :func:`grid_to_csv`.

    The CSV format does not carry beta (the header is exactly ``q,b,J``), so
    the caller supplies it; the CLI keeps it in the run manifest.
    """
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ShapeError(f"{path}: expected three columns q,b,J")
    q_nodes = np.unique(data[:, 0])
    b_nodes = np.unique(data[:, 1])
    if data.shape[0] != q_nodes.size * b_nodes.size:
        raise ShapeError(f"{path}: rows do not form a complete tensor grid")
    values = data[:, 2].reshape(q_nodes.size, b_nodes.size)
    # row-major over q then b: verify the coordinates really are in that order
    if not np.allclose(data[:, 0].reshape(values.shape)[:, 0], q_nodes):
        raise ShapeError(f"{path}: rows are not q-major")
    return DecouplingGrid(q_nodes, b_nodes, values, beta)
