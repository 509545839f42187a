"""Desk-scale simulation of the 2D stochastic heat equation on a torus.

The field solves (in mild form, stepped by exponential Euler)

    du = (1/2) Laplacian u dt + delta * sigma(u) dW^eps,    u(0, .) = a,

where dW^eps is white in time and mollified in space with the Gaussian
kernel of width eps (spectral multiplier exp(-eps^2 |k|^2 / 4)), and delta
is either the attenuation (log eps^-1)^(-1/2) tied to eps ("paper" mode) or
a free parameter (microscopic-variable runs, where the mollifier width is 1
and eps enters only through delta).

Companions: the Volterra equation for the linear-case one-point second
moment (the oracle for the simulation), the empirical decoupling function
estimated from field statistics on the exponential time scale t = eps^(2-q),
and the variance functional of the spatially averaged field whose limit is
the Edwards-Wilkinson variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from .core import (
    ConfigError,
    DecouplingGrid,
    DomainError,
    INV_TWO_SQRT_PI,
    Nonlinearity,
    NumericalError,
    SeededRng,
    sigma_eval,
)
from .parallel import run_tasks
from .sde import SdeParams, simulate_xi

BLOWUP_LIMIT = 1e12


@dataclass(frozen=True)
class SpdeConfig:
    """Periodic-torus discretization of the mollified-noise heat equation.

    ``attenuation`` is the string "paper" for delta = (log eps^-1)^(-1/2)
    (macroscopic variables, requires eps < 1) or a positive float delta
    (microscopic variables, where eps is the mollifier width, usually 1).
    """

    L: float
    n_grid: int
    eps: float
    a: float
    dt_factor: float
    T: float
    attenuation: str | float = "paper"

    def __post_init__(self) -> None:
        if self.L <= 0.0 or self.T <= 0.0:
            raise ConfigError("L and T must be positive")
        if self.n_grid <= 0 or self.n_grid % 2 != 0:
            raise ConfigError("n_grid must be an even positive integer")
        if self.a < 0.0:
            raise ConfigError("a must be nonnegative")
        if not 0.0 < self.dt_factor <= 0.25:
            raise ConfigError("dt_factor must lie in (0, 0.25]")
        if self.eps < 2.0 * self.L / self.n_grid - 1e-12:
            raise ConfigError(
                f"mollifier under-resolved: eps={self.eps} < 2*L/n_grid = "
                f"{2.0 * self.L / self.n_grid}"
            )
        if self.eps > self.L / 8.0:
            raise ConfigError(f"eps={self.eps} not small versus torus size L={self.L}")
        if self.L < 20.0 * math.sqrt(self.T) - 1e-9:
            raise ConfigError(
                f"torus too small for horizon T={self.T}: wrap-around rule "
                f"needs L >= 20*sqrt(T) = {20.0 * math.sqrt(self.T):.6g}"
            )
        if isinstance(self.attenuation, str):
            if self.attenuation != "paper":
                raise ConfigError("attenuation must be 'paper' or a positive float")
            if self.eps >= 1.0:
                raise ConfigError("'paper' attenuation needs eps < 1")
        elif not self.attenuation > 0.0:
            raise ConfigError("custom attenuation delta must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.n_grid

    @property
    def delta(self) -> float:
        if self.attenuation == "paper":
            return (math.log(1.0 / self.eps)) ** -0.5
        return float(self.attenuation)


@dataclass(frozen=True)
class FieldSnapshot:
    t: float
    values: np.ndarray
    negative_entries: int

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite field entries at t={self.t}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _sigma_signed(nl: Nonlinearity, u: np.ndarray) -> np.ndarray:
    # odd extension for discretization undershoots: keeps sigma(u) = beta*u
    # exact in the linear case and preserves the Lipschitz constant
    return np.sign(u) * sigma_eval(nl, np.abs(u))


def _wavenumbers_sq(n: int, L: float) -> np.ndarray:
    kx = 2.0 * math.pi * np.fft.fftfreq(n, d=L / n)
    ky = 2.0 * math.pi * np.fft.rfftfreq(n, d=L / n)
    return kx[:, None] ** 2 + ky[None, :] ** 2


def simulate_spde(
    cfg: SpdeConfig, nl: Nonlinearity, sample_times, rng: SeededRng
) -> list[FieldSnapshot]:
    """One realization; snapshots at the requested times (ascending, <= T).

    A sample time of 0 returns the initial constant field. Steps are uniform
    dt = dt_factor * dx^2 except where one is shortened to land exactly on a
    sample time.
    """
    times = np.asarray(sample_times, dtype=float)
    if times.size == 0:
        raise ConfigError("need at least one sample time")
    if np.any(np.diff(times) <= 0.0) or times[0] < 0.0 or times[-1] > cfg.T + 1e-9:
        raise ConfigError("sample_times must be ascending within [0, T]")

    n = cfg.n_grid
    dx = cfg.dx
    dt = cfg.dt_factor * dx * dx
    delta = cfg.delta
    k2 = _wavenumbers_sq(n, cfg.L)
    moll = np.exp(-cfg.eps**2 * k2 / 4.0)
    heat_cache: dict[float, np.ndarray] = {}

    gen = rng.generator()
    u = np.full((n, n), float(cfg.a))
    out: list[FieldSnapshot] = []
    t = 0.0
    for target in times:
        while t < target - 1e-12 * max(1.0, cfg.T):
            h = min(dt, target - t)
            heat = heat_cache.get(h)
            if heat is None:
                heat = np.exp(-k2 * h / 2.0)
                heat_cache[h] = heat
            xi = gen.standard_normal((n, n))
            noise = np.fft.irfft2(np.fft.rfft2(xi) * moll, s=(n, n)) * (
                math.sqrt(h) / dx
            )
            v = u + delta * _sigma_signed(nl, u) * noise
            u = np.fft.irfft2(np.fft.rfft2(v) * heat, s=(n, n))
            t += h
            peak = float(np.max(np.abs(u)))
            if peak > BLOWUP_LIMIT:
                raise NumericalError(
                    f"field blow-up at t={t:.6g}: max|u| = {peak:.3g}"
                )
        out.append(
            FieldSnapshot(t=float(target), values=u.copy(), negative_entries=int(np.sum(u < 0.0)))
        )
    return out


def volterra_second_moment(beta: float, delta: float, t_grid) -> np.ndarray:
    """Linear-case one-point second moment f(t), normalized to a = 1.

    Solves f(t) = 1 + c * int_0^t f(s)/(t - s + 1/2) ds, c = delta^2 beta^2
    / (4 pi), by product-trapezoidal quadrature on exactly the given grid
    (which must start at 0); callers wanting accuracy pass a fine grid. The
    subcritical window c * log(1 + 2 t_max) < 1 is enforced up front.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size < 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
        raise ConfigError("t_grid must be ascending and start at 0")
    if beta < 0.0 or delta < 0.0:
        raise DomainError("beta and delta must be nonnegative")
    c = delta * delta * beta * beta / (4.0 * math.pi)
    if c > 0.0:
        t_crit = (math.exp(1.0 / c) - 1.0) / 2.0
        if c * math.log(1.0 + 2.0 * t[-1]) >= 1.0:
            raise DomainError(
                f"subcritical window violated: t_max={t[-1]:.6g} reaches the "
                f"critical time {t_crit:.6g} for delta^2 beta^2/(4 pi) = {c:.6g}"
            )
    f = np.ones(t.size)
    if c == 0.0 or t.size == 1:
        return f
    for i in range(1, t.size):
        A = t[i] + 0.5
        tj = t[:i]
        tj1 = t[1 : i + 1]
        dt_seg = tj1 - tj
        lg = np.log((A - tj) / (A - tj1))
        # exact integrals of the linear-interpolation basis against 1/(A - s)
        phi0 = ((tj1 - A) * lg + dt_seg) / dt_seg
        phi1 = ((A - tj) * lg - dt_seg) / dt_seg
        known = np.dot(phi0, f[:i]) + np.dot(phi1[:-1], f[1:i])
        f[i] = (1.0 + c * known) / (1.0 - c * phi1[-1])
    return f


def _jeps_times(cfg: SpdeConfig, q_list) -> tuple[np.ndarray, np.ndarray]:
    """Map q values to simulation times per the config's variable convention.

    'paper' attenuation runs macroscopic variables: t = eps^(2-q). A custom
    delta runs microscopic variables with effective eps = exp(-1/delta^2)
    and t = eps^(-q).
    """
    q = np.asarray(q_list, dtype=float)
    if np.any(q > 2.0):
        raise DomainError("q values must be <= 2")
    if cfg.attenuation == "paper":
        times = cfg.eps ** (2.0 - q)
    else:
        eps_eff = math.exp(-1.0 / cfg.delta**2)
        times = eps_eff ** (-q)
    if np.any(times > cfg.T + 1e-9):
        raise ConfigError(
            f"sample time {times.max():.6g} beyond horizon T={cfg.T}; "
            "raise T or trim q_list"
        )
    return q, times


def _jeps_one_realization(r: int, cfg, nl, times_sorted, stride, rng):
    snaps = simulate_spde(cfg, nl, times_sorted, rng.child(r))
    vals = []
    for s in snaps:
        sub = s.values[::stride, ::stride]
        vals.append(float(np.mean(_sigma_signed(nl, sub) ** 2)))
    return vals


def estimate_j_eps(
    cfg: SpdeConfig,
    nl: Nonlinearity,
    q_list,
    a: float,
    n_realizations: int,
    rng: SeededRng,
    *,
    threads: int | None = None,
) -> list[tuple[float, float, float]]:
    """Monte Carlo estimate of the empirical decoupling function.

    Returns (q, J_eps(q, a), stderr) per requested q. sigma(u)^2 is averaged
    over realizations and over spatial points at least 4*eps apart (the
    stride tames correlation); the standard error is computed across
    realizations only, realizations being independent.
    """
    if n_realizations < 2:
        raise ConfigError("need at least 2 realizations for a standard error")
    q, times = _jeps_times(cfg, q_list)
    order = np.argsort(times)
    times_sorted = times[order]
    if np.any(np.diff(times_sorted) <= 0.0):
        raise ConfigError("q_list maps to duplicate sample times")
    cfg_a = replace(cfg, a=a)
    stride = max(1, int(math.ceil(4.0 * cfg.eps / cfg.dx)))
    worker = partial(
        _jeps_one_realization,
        cfg=cfg_a,
        nl=nl,
        times_sorted=times_sorted,
        stride=stride,
        rng=rng,
    )
    per_real = np.asarray(run_tasks(worker, range(n_realizations), threads))
    out = []
    for pos, qi in zip(np.argsort(order), q):
        m = per_real[:, pos]
        mbar = float(np.mean(m))
        se_m = float(np.std(m, ddof=1) / math.sqrt(n_realizations))
        j_hat = INV_TWO_SQRT_PI * math.sqrt(max(mbar, 0.0))
        se_j = (
            INV_TWO_SQRT_PI * se_m / (2.0 * math.sqrt(mbar)) if mbar > 0.0 else 0.0
        )
        out.append((float(qi), j_hat, se_j))
    return out


@dataclass(frozen=True)
class GaussianBump:
    """Normalized test function exp(-|x - c|^2 / (2 w^2)) / (2 pi w^2)."""

    center: tuple[float, float]
    width: float

    def on_grid(self, cfg: SpdeConfig) -> np.ndarray:
        if self.width <= 0.0:
            raise ConfigError("bump width must be positive")
        cx, cy = self.center
        margin = min(cx, cy, cfg.L - cx, cfg.L - cy)
        if self.width > cfg.L / 16.0 or margin < 5.0 * self.width:
            raise ConfigError("bump not supported well inside the torus")
        coords = np.arange(cfg.n_grid) * cfg.dx
        r2 = (coords[:, None] - cx) ** 2 + (coords[None, :] - cy) ** 2
        return np.exp(-r2 / (2.0 * self.width**2)) / (2.0 * math.pi * self.width**2)


def heat_smoothed_l2_integral(cfg: SpdeConfig, g_grid: np.ndarray) -> float:
    """Spectral quadrature of int_0^T int |G_{T-s} * g(y)|^2 dy ds.

    Exact in s per Fourier mode: the k = 0 mode contributes T |g-hat(0)|^2,
    every other mode (1 - exp(-|k|^2 T)) / |k|^2 times |g-hat(k)|^2, summed
    over the full dual lattice and normalized by the torus area.
    """
    n = cfg.n_grid
    ghat = np.fft.fft2(g_grid) * cfg.dx**2
    kx = 2.0 * math.pi * np.fft.fftfreq(n, d=cfg.dx)
    k2 = kx[:, None] ** 2 + kx[None, :] ** 2
    psi = np.empty_like(k2)
    nz = k2 > 0.0
    psi[nz] = -np.expm1(-k2[nz] * cfg.T) / k2[nz]
    psi[~nz] = cfg.T
    return float(np.sum(np.abs(ghat) ** 2 * psi) / cfg.L**2)


def _ew_one_realization(r: int, cfg, nl, g_grid, rng):
    snap = simulate_spde(cfg, nl, [cfg.T], rng.child(r))[0]
    integral = float(np.sum((snap.values - cfg.a) * g_grid) * cfg.dx**2)
    return integral / cfg.delta  # 1/delta = sqrt(log eps^-1) in 'paper' mode


def ew_variance_functional(
    cfg: SpdeConfig,
    nl: Nonlinearity,
    g: GaussianBump,
    J: DecouplingGrid,
    n_realizations: int,
    rng: SeededRng,
    *,
    xi_paths: int = 100_000,
    xi_dt: float = 1e-3,
    threads: int | None = None,
) -> tuple[float, float]:
    """(empirical variance, limit prediction) of the averaged-field functional.

    Empirical: variance across realizations of sqrt(log eps^-1) * int
    (u(T, x) - a) g(x) dx. Prediction: E sigma(Xi_{a,2}(2))^2 (terminal
    samples of the one-point diffusion under the supplied J) times the
    heat-smoothed L2 integral of g.
    """
    if n_realizations < 2:
        raise ConfigError("need at least 2 realizations")
    g_grid = g.on_grid(cfg)
    worker = partial(_ew_one_realization, cfg=cfg, nl=nl, g_grid=g_grid, rng=rng)
    integrals = np.asarray(run_tasks(worker, range(n_realizations), threads))
    empirical = float(np.var(integrals, ddof=1))

    if nl.beta == 0.0 or cfg.a == 0.0:
        e_sigma_sq = 0.0
    else:
        params = SdeParams(a=cfg.a, Q=2.0, dt=xi_dt, n_paths=xi_paths)
        ens = simulate_xi(J, params, rng.child(0xE77), threads=threads)
        e_sigma_sq = float(np.mean(sigma_eval(nl, ens.terminal) ** 2))
    prediction = e_sigma_sq * heat_smoothed_l2_integral(cfg, g_grid)
    return empirical, prediction
