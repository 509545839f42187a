"""Statistical machinery: KS distances, moment reports, log-covariances."""

import math

import numpy as np
import pytest

import fbheat as fb


def _unit_lognormal_cdf():
    law = fb.lognormal_params(1.0, 2.0, 1.0)
    return law, (lambda x: fb.lognormal_cdf(law, x))


def test_ks_self_sampling_below_kolmogorov_quantile():
    # samples drawn exactly from the law: D < 1.95/sqrt(n) except w.p. ~1e-3
    law, cdf = _unit_lognormal_cdf()
    gen = np.random.default_rng(2718)
    n = 100_000
    samples = np.exp(law.mu_log + math.sqrt(law.s2) * gen.standard_normal(n))
    assert fb.ks_distance(samples, cdf) < 1.95 / math.sqrt(n)


def test_ks_point_mass_at_median_is_half():
    law, cdf = _unit_lognormal_cdf()
    samples = np.full(500, math.exp(law.mu_log))
    assert fb.ks_distance(samples, cdf) == pytest.approx(0.5, abs=1e-9)


def test_ks_gross_shift_saturates():
    law, cdf = _unit_lognormal_cdf()
    gen = np.random.default_rng(5)
    samples = np.exp(law.mu_log + math.sqrt(law.s2) * (gen.standard_normal(1000) + 10.0))
    assert fb.ks_distance(samples, cdf) > 0.95


def test_ks_requires_100_samples():
    _, cdf = _unit_lognormal_cdf()
    with pytest.raises(fb.DomainError):
        fb.ks_distance(np.ones(99), cdf)


def test_ks_invariant_under_increasing_transform():
    # distance(T(samples), law of T(X)) == distance(samples, law of X)
    law, cdf = _unit_lognormal_cdf()
    gen = np.random.default_rng(11)
    samples = np.exp(law.mu_log + math.sqrt(law.s2) * gen.standard_normal(5000))
    d1 = fb.ks_distance(samples, cdf)
    # T = log: transformed law is N(mu_log, s2)
    from scipy.special import ndtr

    d2 = fb.ks_distance(
        np.log(samples), lambda x: ndtr((x - law.mu_log) / math.sqrt(law.s2))
    )
    assert d1 == pytest.approx(d2, abs=1e-12)


def test_moments_constant_sample():
    reports = fb.empirical_moments(np.full(50, 3.25), [1])
    (m1,) = reports
    assert m1.estimate == pytest.approx(3.25)
    assert m1.stderr == 0.0
    assert m1.n == 50


def test_moments_second_moment_of_linear_terminal():
    # oracle: E Xi(2)^2 = 4 pi / (4 pi - 2) = 1.1892797511079254
    law = fb.lognormal_params(1.0, 2.0, 1.0)
    gen = np.random.default_rng(31)
    x = np.exp(law.mu_log + math.sqrt(law.s2) * gen.standard_normal(50_000))
    m2 = fb.empirical_moments(x, [2])[0]
    assert abs(m2.estimate - 1.1892797511079254) <= 3 * m2.stderr


def test_moments_reject_bad_order():
    with pytest.raises(fb.DomainError):
        fb.empirical_moments(np.ones(10), [0])
    with pytest.raises(fb.DomainError):
        fb.empirical_moments(np.ones(10), [1.5])


def test_moment_stderr_scales_inverse_sqrt_n():
    gen = np.random.default_rng(8)
    x = gen.standard_normal(40_000) + 2.0
    full = fb.empirical_moments(x, [1])[0]
    half = fb.empirical_moments(x[: x.size // 2], [1])[0]
    assert half.stderr == pytest.approx(full.stderr * math.sqrt(2.0), rel=0.05)


def test_log_cov_of_identical_samples_is_variance():
    gen = np.random.default_rng(21)
    x = np.exp(gen.standard_normal(5000) * 0.4)
    cov, se, excl = fb.empirical_log_cov(x, x)
    assert cov == pytest.approx(np.var(np.log(x), ddof=1), rel=1e-12)
    assert excl == 0
    assert se > 0.0


def test_log_cov_of_independent_samples_near_zero():
    gen = np.random.default_rng(22)
    x = np.exp(gen.standard_normal(20_000) * 0.4)
    y = np.exp(gen.standard_normal(20_000) * 0.4)
    cov, se, _ = fb.empirical_log_cov(x, y)
    assert abs(cov) <= 3 * se


def test_log_cov_excludes_and_counts_nonpositive_pairs():
    x = np.concatenate([np.full(300, 2.0), [0.0, 1.0]])
    y = np.concatenate([np.full(300, 3.0), [1.0, 0.0]])
    cov, _, excl = fb.empirical_log_cov(x, y)
    assert excl == 2
    assert cov == 0.0  # constant surviving pairs


def test_log_cov_needs_100_surviving_pairs():
    with pytest.raises(fb.DomainError):
        fb.empirical_log_cov(np.zeros(200), np.ones(200))


def test_log_cov_jackknife_matches_brute_force():
    gen = np.random.default_rng(4)
    x = np.exp(gen.standard_normal(150) * 0.3)
    y = np.exp(gen.standard_normal(150) * 0.3 + 0.2 * np.log(x))
    cov, se, _ = fb.empirical_log_cov(x, y)
    lx, ly = np.log(x), np.log(y)
    loo = np.array(
        [
            np.cov(np.delete(lx, i), np.delete(ly, i), ddof=1)[0, 1]
            for i in range(x.size)
        ]
    )
    n = x.size
    se_brute = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    assert se == pytest.approx(se_brute, rel=1e-9)
    assert cov == pytest.approx(np.cov(lx, ly, ddof=1)[0, 1], rel=1e-12)


def test_compare_grids_identity_and_scale():
    spec = fb.GridSpec(0.1, 2.0, 0.1)
    g = fb.exact_linear_grid(spec, 1.0)
    assert fb.compare_grids(g, g, b_min=0.1) == (0.0, 0.0)
    g2 = g.with_values(1.01 * g.values)
    sup, _ = fb.compare_grids(g2, g, b_min=0.1)
    assert sup == pytest.approx(0.01, rel=1e-9)


def test_compare_grids_rejects_mismatch():
    g1 = fb.exact_linear_grid(fb.GridSpec(0.1, 2.0, 0.1), 1.0)
    g2 = fb.exact_linear_grid(fb.GridSpec(0.1, 2.0, 0.2), 1.0)
    with pytest.raises(fb.ShapeError):
        fb.compare_grids(g1, g2, b_min=0.1)
