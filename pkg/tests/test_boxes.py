from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brownlab import boxes, paths
from brownlab.rng import RngStream

# small regime where deep labels actually occur
SMALL = boxes.GoodnessParams(6, Fraction(1, 6), 1 / 3)


def _brute_upcrossings(levels, m):
    return sum(1 for a, b in zip(levels[:-1], levels[1:]) if a == m and b == m + 1)


def _in_G(tree, params, d, i, n):
    """Membership in the n-th goodness class, straight from the recursive definition."""
    if d >= tree.max_depth:
        return False
    kids = tree.children(d, i)
    walk = tree.child_walk(d, i)
    per_height = {int(m): [] for m in params.heights}
    for j, (a, b) in zip(kids, zip(walk.levels[:-1], walk.levels[1:])):
        if b == a + 1 and a in per_height:
            per_height[a].append(j)
    if n == 1:
        return all(len(v) >= params.S for v in per_height.values())
    return all(sum(_in_G(tree, params, d + 1, j, n - 1) for j in v) >= params.S
               for v in per_height.values())


def _brute_label(tree, params, d, i, n_max):
    best = 0
    for n in range(1, n_max + 1):
        if _in_G(tree, params, d, i, n):
            best = n
        else:
            break
    return best


@pytest.fixture(scope="module")
def tree6():
    return paths.build_crossing_tree(6, 3, RngStream(36), durations="sampled")


def test_params_derived_quantities(params):
    assert params.rK == 1
    assert params.C == 4 and params.S == 2
    assert list(params.heights) == [-3, -2, -1, 0, 1, 2, 3]
    assert params.n_heights == 7


def test_params_validation():
    with pytest.raises(ValueError):
        boxes.GoodnessParams(5, Fraction(1, 3), 0.8)
    with pytest.raises(ValueError):
        boxes.GoodnessParams(1, Fraction(1, 1), 0.8)
    with pytest.raises(ValueError):
        boxes.GoodnessParams(5, Fraction(1, 5), 0.0)


@given(st.integers(2, 8), st.integers(0, 2 ** 32))
def test_count_upcrossings_matches_brute_force(K, seed):
    w = paths.sample_conditioned_walk(K, RngStream(seed))
    for m in range(-K + 1, K):
        assert boxes.count_upcrossings(w, m) == _brute_upcrossings(list(w.levels), m)


@pytest.mark.parametrize("K", [2, 3, 5, 8])
def test_expected_upcrossings_sum(K):
    # ups minus downs is K and the walk lasts K^2 steps on average
    assert sum(boxes.expected_upcrossings(K).values()) == pytest.approx((K * K + K) / 2)


def test_expected_upcrossings_monte_carlo():
    K = 4
    exact = boxes.expected_upcrossings(K)
    keys = np.arange(1, 20_001, dtype=np.uint64) * np.uint64(0xD1B54A32D192ED03)
    steps, off = paths.walk_steps(keys, K)
    tally = {m: 0 for m in exact}
    for i in range(len(keys)):
        lv = np.concatenate([[0], np.cumsum(steps[off[i]:off[i + 1]])])
        up = lv[1:] > lv[:-1]
        for m, c in zip(*np.unique(lv[:-1][up], return_counts=True)):
            tally[int(m)] += int(c)
    for m, e in exact.items():
        assert tally[m] / len(keys) == pytest.approx(e, abs=0.05 + 0.05 * e)


def test_height_counts_match_walks(tree6):
    hc = boxes.height_counts(tree6, 1, SMALL)
    for i in range(0, len(hc), 5):
        w = tree6.child_walk(1, i)
        assert [boxes.count_upcrossings(w, int(m)) for m in SMALL.heights] == list(hc[i])


def test_rc_good_mask_matches_single_node(tree6):
    mask = boxes.rc_good_mask(tree6, 1, SMALL)
    for i in range(0, len(mask), 3):
        assert mask[i] == boxes.classify_rc_good(tree6, 1, i, SMALL)


def test_labels_match_recursive_definition(tree6):
    lab = boxes.classify_Gn(tree6, SMALL, 3)
    assert lab.labels[0][0] >= 2
    for d in range(3):
        for i in range(0, len(tree6.direction[d]), max(1, len(tree6.direction[d]) // 40)):
            assert lab.labels[d][i] == _brute_label(tree6, SMALL, d, i, 3 - d)


def test_forest_labels_agree_with_tree_labels():
    for seed in range(0, 60, 3):
        s = RngStream(seed)
        tree = paths.build_crossing_tree(6, 3, s, durations=None)
        full = boxes.classify_Gn(tree, SMALL, 3).labels[0][0]
        assert boxes.forest_labels(np.array([s.key], np.uint64), SMALL, 3)[0] == full


def test_classify_needs_depth(tree6):
    with pytest.raises(boxes.DepthExhaustedError):
        boxes.classify_Gn(tree6, SMALL, 4)
    with pytest.raises(boxes.DepthExhaustedError):
        boxes.height_counts(tree6, 3, SMALL)


def test_select_family_from_tree(tree6):
    lab = boxes.classify_Gn(tree6, SMALL, 3)
    fam = boxes.select_family(tree6, lab, SMALL, 2)
    fam.validate()
    starts = tree6.start_times()
    assert fam.x0[0][0] == starts[0][0]
    # every selected box at scale n has label at least depth - n
    for n in range(1, 3):
        assert np.all(fam.height[n] >= SMALL.m_low) and np.all(fam.height[n] <= SMALL.m_high)


def test_select_family_refuses_short_label(tree6):
    lab = boxes.classify_Gn(tree6, SMALL, 3)
    with pytest.raises(boxes.SelectionError):
        boxes.select_family(tree6, lab, SMALL, int(lab.labels[0][0]) + 1)


def test_sampled_family_structure(family3, params):
    assert [family3.count(n) for n in range(4)] == [1, 14, 196, 2744]
    for n in range(1, 4):
        ptr = family3.child_ptr(n - 1)
        assert ptr[-1] == family3.count(n)
        assert np.all(np.diff(family3.parent[n]) >= 0)
        assert np.array_equal(family3.ell[n], params.K * family3.ell[n - 1][family3.parent[n]]
                              + family3.height[n])


def test_sampled_family_reproducible(params):
    a = boxes.sample_good_family(params, 2, RngStream(4))
    b = boxes.sample_good_family(params, 2, RngStream(4))
    assert all(np.array_equal(x, y) for x, y in zip(a.x1, b.x1))


def test_sampled_family_rejects_small_s():
    with pytest.raises(ValueError):
        boxes.sample_good_family(boxes.GoodnessParams(5, Fraction(1, 5), 0.2), 2, RngStream(1))


def test_validate_catches_tampering(params):
    fam = boxes.sample_good_family(params, 2, RngStream(6))
    fam.x0[2] = fam.x0[2][::-1].copy()
    with pytest.raises(ValueError):
        fam.validate()


def test_gamma_layers_nest(family3, params):
    layers = boxes.gamma_layers(family3)
    r = float(params.r)
    assert layers[0].y0[0] == pytest.approx(-3 * r) and layers[0].y1[0] == 1.0
    for n in range(1, 4):
        p = family3.parent[n]
        cur, prev = layers[n], layers[n - 1]
        assert np.all(cur.x0 >= prev.x0[p] - 1e-15) and np.all(cur.x1 <= prev.x1[p] + 1e-15)
        assert np.all(cur.y0 >= prev.y0[p]) and np.all(cur.y1 <= prev.y1[p])
        assert cur.area < prev.area


def test_flat_family_offsets(family3):
    flat = family3.flat()
    assert flat.offsets[-1] == sum(family3.count(n) for n in range(4))
    # children ranges of scale-0 box cover scale 1 exactly
    assert flat.cstart[0] == flat.offsets[1] and flat.cend[0] == flat.offsets[2]
