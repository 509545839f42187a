"""Closed forms for the linear nonlinearity sigma(u) = beta*u.

Everything the solvers compute numerically has an explicit answer here:
the decoupling function factorizes as J(q, b) = b * jbar(q) with
jbar(q) = (4*pi/beta^2 - q)^(-1/2), the one-point terminal law is
log-normal, and the multipoint log-covariances reduce to a one-line formula
in the exponential-scale distance. These are the oracles the test suite and
the ``compare`` pipeline check against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import (
    DecouplingGrid,
    DomainError,
    GridSpec,
    _check_subcritical,
    lip_bound,
)


def jbar(Q: float, beta: float) -> float:
    """Slope of the exact linear-case decoupling function at time Q.

    jbar(0) = beta/(2*sqrt(pi)) and jbar saturates the Lipschitz bound:
    jbar(q) == lip_bound(q, beta) identically.
    """
    _check_subcritical(beta)
    if beta <= 0.0:
        raise DomainError("jbar needs beta > 0")
    if Q < 0.0 or Q > 2.0:
        raise DomainError(f"Q={Q} outside [0, 2]")
    return (4.0 * math.pi / beta**2 - Q) ** -0.5


def exact_linear_grid(spec: GridSpec, beta: float) -> DecouplingGrid:
    """Tabulate J(q, b) = b * jbar(q) on the spec's tensor grid."""
    q = spec.q_nodes()
    b = spec.b_nodes()
    slopes = np.array([jbar(float(qi), beta) for qi in q])
    return DecouplingGrid(q, b, slopes[:, None] * b[None, :], beta)


@dataclass(frozen=True)
class LogNormalLaw:
    """Law of a * exp(S - E[S^2]/2) with S ~ N(0, s2).

    mu_log is the mean of the log, so mean = exp(mu_log + s2/2) = a by
    construction. s2 = 0 degenerates to a point mass at exp(mu_log); a = 0
    is flagged as a point mass at zero (degenerate_at_zero).
    """

    mu_log: float
    s2: float
    degenerate_at_zero: bool = False

    def __post_init__(self) -> None:
        if self.s2 < 0.0:
            raise DomainError("s2 must be nonnegative")

    def mean(self) -> float:
        if self.degenerate_at_zero:
            return 0.0
        return math.exp(self.mu_log + self.s2 / 2.0)


def lognormal_params(a: float, Q: float, beta: float) -> LogNormalLaw:
    """Terminal law of the linear one-point diffusion started at a.

    s2 = log(x / (x - Q)) with x = 4*pi/beta^2, mu_log = log(a) - s2/2.
    """
    _check_subcritical(beta)
    if a < 0.0:
        raise DomainError("a must be nonnegative")
    if Q < 0.0 or Q > 2.0:
        raise DomainError(f"Q={Q} outside [0, 2]")
    if beta == 0.0:
        s2 = 0.0
    else:
        x = 4.0 * math.pi / beta**2
        s2 = math.log(x / (x - Q))
    if a == 0.0:
        return LogNormalLaw(mu_log=-math.inf, s2=s2, degenerate_at_zero=True)
    return LogNormalLaw(mu_log=math.log(a) - s2 / 2.0, s2=s2)


def lognormal_cdf(law: LogNormalLaw, x) -> float | np.ndarray:
    """CDF of the law; 0 for x <= 0, a step for the degenerate cases.

    Uses the exact normal CDF (scipy.special.ndtr, |error| < 1e-15), well
    inside the 1e-7 budget the KS thresholds require.
    """
    arr = np.asarray(x, dtype=float)
    if law.degenerate_at_zero:
        out = np.where(arr >= 0.0, 1.0, 0.0)
    elif law.s2 == 0.0:
        out = np.where(arr >= math.exp(law.mu_log), 1.0, 0.0)
        out = np.where(arr <= 0.0, 0.0, out)
    else:
        z = (np.log(np.maximum(arr, 1e-300)) - law.mu_log) / math.sqrt(law.s2)
        out = np.where(arr <= 0.0, 0.0, ndtr(z))
    return float(out) if np.ndim(x) == 0 else out


def multipoint_cov(Q: float, beta: float, d: float) -> float:
    """Covariance of (log terminal values) for two points at distance d.

    Evaluates log((x - min(max(2d, 0), Q)) / (x - Q)), x = 4*pi/beta^2.
    d = -inf (same point) gives the full variance s2; d >= Q/2 gives 0
    (asymptotic independence).
    """
    _check_subcritical(beta)
    if Q < 0.0 or Q > 2.0:
        raise DomainError(f"Q={Q} outside [0, 2]")
    if beta == 0.0:
        return 0.0
    x = 4.0 * math.pi / beta**2
    shared = min(max(2.0 * d, 0.0), Q)
    return math.log((x - shared) / (x - Q))
