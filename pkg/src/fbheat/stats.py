"""Statistical comparison machinery: goodness of fit, moments with standard
errors, log-covariances for branching runs, and grid-to-grid error norms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DecouplingGrid, DomainError, ShapeError, _require_same_layout, y_norm_distance

# guard for relative errors where the reference is exactly 0 (the b=0 column)
TINY = 1e-300


@dataclass(frozen=True)
class MomentReport:
    order: int
    estimate: float
    stderr: float
    n: int


def ks_distance(samples, cdf: Callable) -> float:
    """Kolmogorov-Smirnov distance between samples and a continuous law.

    ``cdf`` is called once on the sorted sample array and must broadcast.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 100:
        raise DomainError(f"need at least 100 samples for a KS distance, got {n}")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(np.abs(i / n - f), np.abs((i - 1) / n - f))))


def empirical_moments(samples, orders) -> list[MomentReport]:
    """Raw moments E[X^k] with standard errors, two-pass/pairwise summation."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise DomainError("empty sample")
    out = []
    for k in orders:
        if int(k) != k or k < 1:
            raise DomainError(f"moment order must be a positive integer, got {k}")
        powers = x ** int(k)
        est = float(np.mean(powers))
        if x.size > 1:
            se = float(np.std(powers, ddof=1) / np.sqrt(x.size))
        else:
            se = float("nan")
        out.append(MomentReport(order=int(k), estimate=est, stderr=se, n=x.size))
    return out


def empirical_log_cov(x, y) -> tuple[float, float, int]:
    """Sample covariance of (log x, log y) with a jackknife standard error.

    Pairs with min(x, y) <= 0 (zero-clamped paths) are excluded and counted;
    fewer than 100 surviving pairs is an error.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ShapeError("x and y must be 1-D arrays of equal length")
    keep = (xa > 0.0) & (ya > 0.0)
    excluded = int(np.sum(~keep))
    lx = np.log(xa[keep])
    ly = np.log(ya[keep])
    n = lx.size
    if n < 100:
        raise DomainError(f"only {n} positive pairs survive; need at least 100")
    dx = lx - lx.mean()
    dy = ly - ly.mean()
    s_xy = float(np.dot(dx, dy))
    cov = s_xy / (n - 1)
    # leave-one-out covariances in closed form: dropping pair i changes the
    # cross-sum by n/(n-1) * dx_i*dy_i and the normalization to n-2
    loo = (s_xy - dx * dy * (n / (n - 1.0))) / (n - 2.0)
    se = float(np.sqrt((n - 1.0) / n * np.sum((loo - loo.mean()) ** 2)))
    return cov, se, excluded


def compare_grids(
    g1: DecouplingGrid, g2: DecouplingGrid, b_min: float
) -> tuple[float, float]:
    """(sup relative error on b >= b_min, weighted-norm distance) of g1 vs g2.

    g2 is the reference in the relative error; both grids must share nodes.
    """
    _require_same_layout(g1, g2)
    mask = g1.b_nodes >= b_min
    if not np.any(mask):
        raise DomainError(f"no grid nodes with b >= {b_min}")
    num = np.abs(g1.values[:, mask] - g2.values[:, mask])
    den = np.maximum(np.abs(g2.values[:, mask]), TINY)
    return float(np.max(num / den)), y_norm_distance(g1, g2)
