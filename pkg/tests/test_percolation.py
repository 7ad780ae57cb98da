import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from brownlab import boxes, paths
from brownlab import percolation as perc
from brownlab.rng import SALT_WALK, RngStream, derive_key

SPARSE = boxes.GoodnessParams(5, Fraction(1, 5), 0.2)


@given(st.integers(0, 60), st.floats(0.0, 1.0), st.integers(-2, 65))
def test_binomial_tails_match_scipy(a, t, k):
    up = perc.binomial_upper_tail(a, t, k)
    lo = perc.binomial_lower_tail(a, t, k)
    assert up == pytest.approx(binom.sf(k - 1, a, t), abs=1e-12)
    assert up + lo == pytest.approx(1.0, abs=1e-12)


def test_wilson_and_smoothed_se():
    lo, hi = perc.wilson_interval(0, 100)
    assert lo == 0.0 and 0 < hi < 0.05
    assert perc.smoothed_se(0, 100) > 0
    assert perc.binomial_se(0.5, 100) == pytest.approx(0.05)


def test_child_counts_match_walks(params):
    stream = RngStream(3)
    dist = perc.estimate_child_distribution(params, 300, stream)
    keys = derive_key(perc.trial_keys(stream, 300), 0, SALT_WALK)
    steps, off = paths.walk_steps(keys, params.K)
    for i in range(0, 300, 11):
        w = paths.LatticeWalkPath(params.K, np.concatenate([[0], np.cumsum(steps[off[i]:off[i + 1]])]))
        for m in dist.heights:
            assert dist.at(m)[i] == boxes.count_upcrossings(w, int(m))


def test_child_count_means(params):
    dist = perc.estimate_child_distribution(params, 40_000, RngStream(4))
    exact = boxes.expected_upcrossings(params.K)
    for m, e in exact.items():
        col = dist.at(m)
        assert abs(col.mean() - e) < 4 * col.std() / math.sqrt(len(col)) + 1e-12
    # from 0 to K every level 0..K-1 is crossed upward at least once
    assert np.all(dist.counts[:, params.K - 1:] >= 1)


def test_estimate_q_bands(params):
    dist = perc.estimate_child_distribution(params, 5000, RngStream(5))
    adm = perc.estimate_q(params, 0, None, dist=dist)
    trav = perc.estimate_q(params, 0, None, band="traversed", dist=dist)
    assert 0 <= adm.q <= 1 and adm.ci[0] <= adm.q <= adm.ci[1]
    with pytest.raises(ValueError):
        perc.estimate_q(params, 0, None, band="bogus", dist=dist)
    assert trav.trials == adm.trials == 5000


def test_F_at_one_is_first_label_fraction():
    # with t = 1 every admissible child survives, so F(1) is P[label >= 1]
    stream = RngStream(8)
    dist = perc.estimate_child_distribution(SPARSE, 20_000, stream)
    k, n = perc.direct_label_fraction(SPARSE, 1, 20_000, stream)
    assert perc.evaluate_F(1.0, dist) == pytest.approx(k / n, abs=1e-15)


def test_F_recursion_predicts_second_label():
    dist = perc.estimate_child_distribution(SPARSE, 40_000, RngStream(9))
    a1 = perc.evaluate_F(1.0, dist)
    a2 = perc.evaluate_F(a1, dist)
    k, n = perc.direct_label_fraction(SPARSE, 2, 40_000, RngStream(10))
    assert k > 50
    assert abs(k / n - a2) < 4 * math.sqrt(perc.smoothed_se(k, n) ** 2 + a2 * (1 - a2) / 40_000)


def test_F_is_monotone(params):
    dist = perc.estimate_child_distribution(SPARSE, 5000, RngStream(2))
    ts = np.linspace(0, 1, 21)
    vals = [perc.evaluate_F(t, dist) for t in ts]
    assert vals[0] == 0.0
    assert np.all(np.diff(vals) >= -1e-15)
    with pytest.raises(ValueError):
        perc.evaluate_F(1.5, dist)


def test_iterate_alpha_fixed_point():
    dist = perc.estimate_child_distribution(SPARSE, 5000, RngStream(2))
    curve = perc.iterate_alpha(dist, n_max=6)
    assert len(curve.alphas) == 6
    assert np.all(np.diff(curve.alphas) <= 1e-15)
    assert curve.residual < 1e-12
    assert curve.regime_holds == (curve.regime_min > 0.75)


@pytest.mark.parametrize("cK", [1, 4, 9, 20])
def test_binomial_bound(cK):
    for t in np.linspace(0.76, 0.99, 24):
        b = perc.binomial_bound_check(cK, math.ceil(cK / 2), float(t))
        assert b.holds
        assert b.bound == pytest.approx((4 * t * (1 - t)) ** (cK / 2))


def test_binomial_bound_rejects_bad_input():
    with pytest.raises(ValueError):
        perc.binomial_bound_check(4, 2, 0.5)
    with pytest.raises(ValueError):
        perc.binomial_bound_check(4, 3, 0.8)


def test_gamblers_ruin():
    res = perc.gamblers_ruin_check(Fraction(1, 5), 20_000, RngStream(12))
    assert res.target == pytest.approx(3 / 8)
    assert abs(res.z) < 4
    with pytest.raises(ValueError):
        perc.gamblers_ruin_check(0, 10, RngStream(1))


def test_occupation_of_a_linear_path():
    h = 1e-4
    p = paths.FinePath(h, np.arange(0, 1.5, h))
    prof = perc.occupation_local_time_check(p, (0.0, 0.8), 0.05)
    # unit speed spends exactly one unit of time per unit of level
    assert np.allclose(prof.local_time, 1.0, atol=2e-3)
    assert prof.hitting_time == pytest.approx(1.0, abs=2 * h)
    assert prof.outside == pytest.approx(0.2, abs=2e-3)


def test_occupation_needs_hit():
    with pytest.raises(ValueError):
        perc.occupation_local_time_check(paths.FinePath(0.1, np.zeros(5)), (0, 1), 0.1)


def test_besq_profile_mean():
    # local time at the start level before hitting 1 is exponential with mean 2,
    # and stays a martingale below the start
    gen = RngStream(13).generator()
    prof = perc._besq_profiles(gen, 1.0, 0.01, 160, 20_000)
    for j in (100, 160):
        col = prof[:, j]
        assert abs(col.mean() - 2.0) < 4 * col.std() / math.sqrt(len(col))


def test_local_time_curve_shape():
    c = perc.local_time_infimum_curve(Fraction(1, 5), [0.01, 0.05, 0.2], 2000, RngStream(14))
    assert np.all(np.diff(c.p_hat) >= 0)
    assert np.all(c.ci_high >= c.p_hat)
    with pytest.raises(ValueError):
        perc.local_time_infimum_curve(0.2, [0.1], 10, RngStream(1), method="fine", eps=None)


def test_psi():
    assert perc.psi(0.0) == pytest.approx(0.0, abs=1e-14)
    # E sigma = 1, so psi is above lambda by convexity
    for lam in (0.1, 0.5, 1.0):
        assert perc.psi(lam) > lam


def test_occupation_events_respect_chernoff(params):
    rep = perc.upcrossings_vs_occupation_check(params, 2.0, 0.3, 4000, RngStream(15))
    se = np.sqrt(rep.per_interval_failure * (1 - rep.per_interval_failure) / 4000)
    assert np.all(rep.per_interval_failure <= rep.per_interval_bound + 4 * se + 1e-12)
    assert rep.union_estimate == pytest.approx(rep.per_interval_failure.sum())
    with pytest.raises(ValueError):
        perc.upcrossings_vs_occupation_check(params, -1.0, 0.3, 10, RngStream(1))
