import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brownlab import levelset as ls
from brownlab import paths
from brownlab.rng import RngStream


def _brute_clusters(values, y):
    hit = [(a - y) * (b - y) <= 0 for a, b in zip(values[:-1], values[1:])]
    out, i = [], 0
    while i < len(hit):
        if hit[i]:
            j = i
            while j < len(hit) and hit[j]:
                j += 1
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


@given(st.lists(st.integers(-4, 4), min_size=2, max_size=60), st.integers(-4, 4))
def test_level_set_matches_brute_force(vals, y):
    p = paths.FinePath(0.5, np.array(vals, float))
    got = ls.extract_level_set(p, y + 0.5 * (y % 2))
    want = _brute_clusters(vals, y + 0.5 * (y % 2))
    assert [tuple(c) for c in got.clusters] == want


def _small_path(seed):
    return paths.sample_fine_path(1.0, 2.0 ** -10, RngStream(seed))


@given(st.integers(0, 2 ** 20), st.floats(-0.5, 0.5), st.integers(1, 6))
def test_cover_is_sound(seed, y, k):
    p = _small_path(seed)
    lset = ls.extract_level_set(p, y)
    cov = ls.build_cover(lset, k, dyadic_depth=12)
    if isinstance(cov, ls.InfeasibleCover):
        assert cov.k == k
        return
    n = lset.n_cells
    assert cov.size_ok and cov.root_sum_ok
    assert np.all(cov.hi > cov.lo)
    assert np.all(cov.hi[:-1] <= cov.lo[1:])
    # every cluster sits in exactly one interval, in order
    if cov.m:
        assert cov.first[0] == 0 and cov.last[-1] == len(lset.clusters) - 1
        assert np.array_equal(cov.first[1:], cov.last[:-1] + 1)
    for j in range(cov.m):
        for c in range(cov.first[j], cov.last[j] + 1):
            a, b = lset.clusters[c]
            # open interval, closed only at the ends of the horizon
            assert cov.lo[j] * n < a * ls.ONE or cov.lo[j] == a == 0
            assert cov.hi[j] * n > b * ls.ONE or (cov.hi[j] == ls.ONE and b == n)
    assert np.all((cov.hi - cov.lo) * k < ls.ONE)
    assert cov.root_sum() * k < 1 + 1e-9


def test_cover_of_empty_level_set():
    p = paths.FinePath(0.1, np.zeros(11))
    cov = ls.build_cover(ls.extract_level_set(p, 5.0), 3)
    assert cov.m == 0 and cov.feasible and cov.method == "empty"


def test_cover_argument_checks():
    lset = ls.extract_level_set(_small_path(1), 0.0)
    with pytest.raises(ValueError):
        ls.build_cover(lset, 0)
    with pytest.raises(ValueError):
        ls.build_cover(lset, 2, dyadic_depth=ls.DEPTH_CAP + 1)


def test_coarse_level_set_has_a_cover():
    # a single straddling cell at the middle of the horizon
    p = paths.FinePath(0.25, np.array([1.0, 1.0, -1.0, -1.0, -1.0]))
    lset = ls.extract_level_set(p, 0.0)
    cov = ls.build_cover(lset, 1, dyadic_depth=4)
    assert isinstance(cov, ls.CoverFamily) and cov.m == 1
    assert cov.lo[0] * 4 < 1 * ls.ONE and cov.hi[0] * 4 > 2 * ls.ONE
    # any open dyadic cover of [1/4, 1/2] is longer than 1/4
    assert isinstance(ls.build_cover(lset, 2, dyadic_depth=4), ls.InfeasibleCover)


def test_unreachable_root_sum():
    # clusters near both ends force two intervals whose roots add up past 1/k
    v = np.array([1.0] + [-1.0] * 6 + [1.0])
    cov = ls.build_cover(ls.extract_level_set(paths.FinePath(1 / 7, v), 0.0), 4, 3)
    assert isinstance(cov, ls.InfeasibleCover)
    assert cov.best_root_sum >= 0.25


def test_delta_schedule():
    d = ls.delta_schedule(1 << 12)
    assert d[0] == 1 << 12 and d[-1] == 1
    assert np.all(np.diff(d) < 0)


def test_crossing_stats_brute(fine_path):
    lset = ls.extract_level_set(fine_path, 0.1)
    cov = ls.build_cover(lset, 1)
    assert isinstance(cov, ls.CoverFamily)
    M, S = ls.crossing_stats(cov, lset)
    v = np.abs(fine_path.values - 0.1)
    for j in range(cov.m):
        a = lset.clusters[cov.first[j], 0]
        b = lset.clusters[cov.last[j], 1]
        assert M[j] == v[a:b + 1].max()
    assert S == pytest.approx(M.sum())


def test_fit_decay_recovers_power_law():
    ks = np.arange(2, 9)
    slope, se = ls.fit_decay(ks, 3.0 * ks ** -0.5)
    assert slope == pytest.approx(-0.5) and se < 1e-8
    assert math.isnan(ls.fit_decay([2, 3], [1.0, 0.5])[0])


def test_pooled_decay_ignores_intercepts():
    ks = np.arange(2, 9)
    decs = [ls.CoverDecay(ks, np.ones(7, bool), c * ks ** -0.7, np.zeros(7), 0, 0)
            for c in (0.1, 1.0, 5.0)]
    slope, se = ls.pooled_decay(decs)
    assert slope == pytest.approx(-0.7) and se < 1e-8


def test_prune_polyline():
    pts = [(0, 0), (0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (1, 2), (1, 3)]
    assert ls.prune_polyline(pts).tolist() == [[0, 0], [0, 2], [1, 2], [1, 3]]
    assert ls.polyline_length(np.array([[0, 0], [0, 2], [1, 2]])) == 3.0


def test_validate_detour_on_a_line():
    p = paths.FinePath(1 / 64, np.linspace(0, 1, 65))
    g = ls.DetourPath(np.array([[0.25, 0.5], [0.75, 0.5], [0.75, 0.9]]), 0.9, 0.5, None, 0.0, 0, 1.0)
    rep = ls.validate_detour(g, p)
    # once on the horizontal leg at t = 0.5, once on the vertical leg at t = 0.75
    assert rep["intersections"] == 2
    assert rep["axis_parallel"] and rep["length_matches"]
    bad = ls.DetourPath(np.array([[0.0, 0.0], [1.0, 1.0]]), math.sqrt(2), 0.0, None, 0.0, 0, 1.0)
    assert not ls.validate_detour(bad, p)["axis_parallel"]


@pytest.mark.parametrize("z, w", [((0.2, 0.0), (0.7, 0.0)), ((0.8, 0.1), (0.3, 0.05)),
                                  ((0.1, -0.2), (0.9, 0.3))])
def test_route_detour_contract(z, w):
    p = paths.sample_fine_path(1.0, 2.0 ** -14, RngStream(21))
    eps = 0.4
    try:
        g = ls.route_detour(p, z, w, eps)
    except ls.RouteInfeasible as e:
        assert e.best_S >= e.budget
        return
    rep = ls.validate_detour(g, p)
    assert g.z == z and g.w == w
    assert rep["axis_parallel"] and rep["length_matches"]
    assert rep["intersections"] <= rep["hop_bound"]
    assert w[1] <= g.level < w[1] + eps / 4
    assert g.S < eps / 8
    assert g.length <= abs(w[0] - z[0]) + abs(w[1] - z[1]) + eps


def test_route_detour_gives_up():
    p = paths.sample_fine_path(1.0, 2.0 ** -12, RngStream(22))
    with pytest.raises(ls.RouteInfeasible):
        ls.route_detour(p, (0.0, 0.0), (1.0, 0.0), 1e-6)
    with pytest.raises(ValueError):
        ls.route_detour(p, (0.0, 0.0), (1.0, 0.0), 0.0)


def test_default_levels():
    lv = ls.default_levels(0.3, 0.4, 4)
    assert lv[0] == 0.3
    assert np.all((lv[1:] > 0.3) & (lv[1:] < 0.4))


def test_bridge_max_small():
    rep = ls.bridge_max_check(2.0, 256, 4000, RngStream(23))
    assert rep.target[0] == 1.0
    assert rep.sup_error < 0.04


def test_identity_small():
    rep = ls.excursion_range_identity_check(1.0, 1024, 3000, RngStream(24))
    assert rep.pvalue > 0.001


def test_tail_bound_small():
    lengths = ls.geometric_lengths(1.0, 20)
    assert lengths.sum() < 1.0
    rep = ls.excursion_tail_bound_check(1.0, lengths, 5000, RngStream(25))
    assert rep.violations == 0
    assert np.all(rep.xs >= math.sqrt(4 / math.e))
    with pytest.raises(ValueError):
        ls.excursion_tail_bound_check(1.0, [0.7, 0.7], 10, RngStream(1))


def test_stitching_demo():
    rep = ls.stitching_demo(0.5, 3, 20_000, RngStream(26))
    # each step lasts a^2 times a unit-mean exit time
    assert rep.first_mean == pytest.approx(0.25, abs=0.01)
    assert rep.ci[0] <= rep.p_exceed <= rep.ci[1]
    assert (0.1, 2, 0.81) in [(q, j, round(v, 12)) for q, j, v in rep.table]
    with pytest.raises(ValueError):
        ls.stitching_demo(0.0, 3, 10, RngStream(1))
