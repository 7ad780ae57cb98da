"""Boxes of a crossing tree: upcrossing counts, goodness labels, selection of
the nested family and the rectangle layers it spans."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numba
import numpy as np

from .paths import (CrossingTree, LatticeWalkPath, _group_prefix, _group_sum,
                    leaf_exit_times, p_up)
from .rng import SALT_CHILD, SALT_RETRY, as_stream, nb_derive_key, nb_uniform


class DepthExhaustedError(ValueError):
    pass


class SelectionError(RuntimeError):
    def __init__(self, scale: int, box: int, height: int, found: int, needed: int):
        super().__init__(f"box {box} at scale {scale} has only {found} eligible "
                         f"children at height {height}, needs {needed}")
        self.scale, self.box, self.height = scale, box, height


@dataclass(frozen=True)
class GoodnessParams:
    K: int
    r: Fraction
    c: float

    def __post_init__(self):
        r = Fraction(self.r).limit_denominator(10 ** 6)
        object.__setattr__(self, "r", r)
        if self.K < 2 or r <= 0 or self.c <= 0:
            raise ValueError("need K >= 2, r > 0, c > 0")
        if (r * self.K).denominator != 1:
            raise ValueError(f"rK must be an integer (r={r}, K={self.K})")
        if self.m_low > self.m_high:
            raise ValueError("empty height range")

    @property
    def rK(self) -> int:
        return int(self.r * self.K)

    @property
    def s(self) -> float:
        return self.c / 2

    @property
    def C(self) -> int:
        """Upcrossings demanded per height for (r, c)-goodness."""
        return math.ceil(self.c * self.K - 1e-9)

    @property
    def S(self) -> int:
        """Children per height demanded by the recursive goodness."""
        return math.ceil(self.s * self.K - 1e-9)

    @property
    def m_low(self) -> int:
        return -3 * self.rK

    @property
    def m_high(self) -> int:
        return self.K - self.rK - 1

    @property
    def heights(self) -> np.ndarray:
        return np.arange(self.m_low, self.m_high + 1)

    @property
    def n_heights(self) -> int:
        return self.K + 2 * self.rK

    def with_c(self, c: float) -> "GoodnessParams":
        return GoodnessParams(self.K, self.r, c)


# ---------------------------------------------------------------- counting

def count_upcrossings(walk: LatticeWalkPath, m: int) -> int:
    if not (-walk.K < m and m + 1 <= walk.K):
        raise ValueError(f"height {m} outside the band (-{walk.K}, {walk.K - 1}]")
    lv = walk.levels
    return int(np.count_nonzero((lv[:-1] == m) & (lv[1:] == m + 1)))


def expected_upcrossings(K: int) -> dict[int, float]:
    """Exact mean number of steps m -> m+1 of the conditioned walk."""
    states = np.arange(-K + 1, K)
    n = states.size
    Q = np.zeros((n, n))
    pu = p_up(states, K)
    for i, x in enumerate(states):
        if x + 1 < K:
            Q[i, i + 1] = pu[i]
        if x - 1 > -K:
            Q[i, i - 1] = 1 - pu[i]
    visits = np.linalg.solve(np.eye(n) - Q.T, (states == 0).astype(float))
    return {int(x): float(visits[i] * pu[i]) for i, x in enumerate(states)}


@numba.njit(cache=True)
def _height_counts(pdir, cdir, ptr, mlo, mhi):
    n = pdir.shape[0]
    out = np.zeros((n, mhi - mlo + 1), np.int32)
    for p in range(n):
        lam = 0
        for j in range(ptr[p], ptr[p + 1]):
            st = cdir[j] * pdir[p]
            if st > 0 and mlo <= lam <= mhi:
                out[p, lam - mlo] += 1
            lam += st
    return out


def height_counts(tree: CrossingTree, depth: int, params: GoodnessParams) -> np.ndarray:
    """Upcrossing counts (in each node's own frame) per height, nodes x heights."""
    if depth >= tree.max_depth:
        raise DepthExhaustedError(f"nodes at depth {depth} have no child walks")
    return _height_counts(tree.direction[depth], tree.direction[depth + 1],
                          tree.child_ptr[depth], params.m_low, params.m_high)


def classify_rc_good(tree: CrossingTree, depth: int, index: int,
                     params: GoodnessParams, threshold: int | None = None) -> bool:
    if depth >= tree.max_depth:
        raise DepthExhaustedError("leaf node has no child walk")
    walk = tree.child_walk(depth, index)
    need = params.C if threshold is None else threshold
    return all(count_upcrossings(walk, int(m)) >= need for m in params.heights)


def rc_good_mask(tree: CrossingTree, depth: int, params: GoodnessParams,
                 threshold: int | None = None) -> np.ndarray:
    need = params.C if threshold is None else threshold
    return np.all(height_counts(tree, depth, params) >= need, axis=1)


@numba.njit(cache=True)
def _labels_level(pdir, cdir, ptr, clab, mlo, mhi, S, cap):
    n = pdir.shape[0]
    H = mhi - mlo + 1
    out = np.zeros(n, np.int32)
    top = np.empty((H, S), np.int32)
    cnt = np.empty(H, np.int32)
    for p in range(n):
        cnt[:] = 0
        top[:, :] = -1
        lam = 0
        for j in range(ptr[p], ptr[p + 1]):
            st = cdir[j] * pdir[p]
            if st > 0 and mlo <= lam <= mhi:
                h = lam - mlo
                cnt[h] += 1
                # keep the S largest child labels, sorted descending
                v = clab[j]
                for q in range(S):
                    if v > top[h, q]:
                        v, top[h, q] = top[h, q], v
            lam += st
        good = True
        worst = cap
        for h in range(H):
            if cnt[h] < S:
                good = False
                break
            if top[h, S - 1] < worst:
                worst = top[h, S - 1]
        if good:
            out[p] = min(cap, 1 + worst)
    return out


@dataclass
class GoodnessLabels:
    params: GoodnessParams
    n_max: int
    labels: list[np.ndarray]

    def fraction_at_least(self, depth: int, n: int) -> float:
        return float(np.mean(self.labels[depth] >= n))


def classify_Gn(tree: CrossingTree, params: GoodnessParams, n_max: int) -> GoodnessLabels:
    """Largest n with node in G_n (capped at n_max), for every node."""
    if n_max < 0 or tree.max_depth < n_max:
        raise DepthExhaustedError(
            f"tree depth {tree.max_depth} cannot certify labels up to {n_max}")
    if tree.K != params.K:
        raise ValueError("tree and params disagree on K")
    D = tree.max_depth
    labels = [None] * (D + 1)
    labels[D] = np.zeros(len(tree.direction[D]), np.int32)
    for d in range(D - 1, -1, -1):
        labels[d] = _labels_level(tree.direction[d], tree.direction[d + 1],
                                  tree.child_ptr[d], labels[d + 1], params.m_low,
                                  params.m_high, params.S, n_max)
    return GoodnessLabels(params, n_max, labels)


# ---------------------------------------------------------------- pruned forests
# Labels of many independent roots without materialising whole trees: only
# in-frame up-children at admissible heights of good boxes are expanded. The
# node keys match build_crossing_tree, so labels agree with classify_Gn.

@numba.njit(cache=True)
def _expand_good(keys, K, mlo, mhi, S):
    """Walk every box, test goodness, and list the counted children."""
    n = keys.shape[0]
    H = mhi - mlo + 1
    good = np.zeros(n, np.bool_)
    nchild = np.zeros(n, np.int64)
    cnt = np.empty(H, np.int64)
    # first pass: goodness and counted children
    for i in range(n):
        wkey = nb_derive_key(keys[i], 0, 0x5A17)
        cnt[:] = 0
        x = 0
        t = 0
        while x < K:
            u = nb_uniform(wkey, t)
            t += 1
            if u * (2 * (x + K)) < x + K + 1:
                if mlo <= x <= mhi:
                    cnt[x - mlo] += 1
                x += 1
            else:
                x -= 1
        ok = True
        tot = 0
        for h in range(H):
            if cnt[h] < S:
                ok = False
            tot += cnt[h]
        good[i] = ok
        if ok:
            nchild[i] = tot
    ptr = np.zeros(n + 1, np.int64)
    for i in range(n):
        ptr[i + 1] = ptr[i] + nchild[i]
    ckeys = np.empty(ptr[n], np.uint64)
    cheight = np.empty(ptr[n], np.int64)
    for i in range(n):
        if not good[i]:
            continue
        wkey = nb_derive_key(keys[i], 0, 0x5A17)
        x = 0
        t = 0
        w = ptr[i]
        while x < K:
            u = nb_uniform(wkey, t)
            if u * (2 * (x + K)) < x + K + 1:
                if mlo <= x <= mhi:
                    ckeys[w] = nb_derive_key(keys[i], t, SALT_CHILD)
                    cheight[w] = x
                    w += 1
                x += 1
            else:
                x -= 1
            t += 1
    return good, ptr, ckeys, cheight


@numba.njit(cache=True)
def _pruned_labels(good, ptr, cheight, clab, mlo, mhi, S, cap):
    n = good.shape[0]
    H = mhi - mlo + 1
    out = np.zeros(n, np.int32)
    top = np.empty((H, S), np.int32)
    for p in range(n):
        if not good[p]:
            continue
        top[:, :] = -1
        for j in range(ptr[p], ptr[p + 1]):
            h = cheight[j] - mlo
            v = clab[j]
            for q in range(S):
                if v > top[h, q]:
                    v, top[h, q] = top[h, q], v
        worst = cap
        for h in range(H):
            if top[h, S - 1] < worst:
                worst = top[h, S - 1]
        out[p] = min(cap, 1 + worst)
    return out


def forest_labels(root_keys: np.ndarray, params: GoodnessParams, n_max: int) -> np.ndarray:
    """Goodness labels of independent roots, each treated as a tree of depth n_max."""
    keys = [np.ascontiguousarray(root_keys, dtype=np.uint64)]
    exp = []
    for _ in range(n_max):
        g, ptr, ck, ch = _expand_good(keys[-1], params.K, params.m_low, params.m_high,
                                      params.S)
        exp.append((g, ptr, ch))
        keys.append(ck)
    lab = np.zeros(len(keys[-1]), np.int32)
    for g, ptr, ch in reversed(exp):
        lab = _pruned_labels(g, ptr, ch, lab, params.m_low, params.m_high,
                             params.S, n_max)
    return lab


# ---------------------------------------------------------------- selected family

@dataclass
class SelectedFamily:
    """Nested family of boxes, stored per scale in time order.

    Scale-n arrays: ``x0``/``x1`` time extent, ``ell`` lower level in units of
    K^-n, ``height`` the level relative to the parent (m), ``parent`` index
    into scale n-1.
    """

    params: GoodnessParams
    depth: int
    x0: list[np.ndarray]
    x1: list[np.ndarray]
    ell: list[np.ndarray]
    height: list[np.ndarray]
    parent: list[np.ndarray]
    duration_mode: str = "sampled"

    def __post_init__(self):
        self._flat = None

    def count(self, n: int) -> int:
        return len(self.x0[n])

    def child_ptr(self, n: int) -> np.ndarray:
        if n >= self.depth:
            return np.zeros(self.count(n) + 1, np.int64)
        c = np.bincount(self.parent[n + 1], minlength=self.count(n))
        return np.concatenate([[0], np.cumsum(c)]).astype(np.int64)

    def flat(self) -> "FlatFamily":
        if self._flat is None:
            self._flat = FlatFamily.from_family(self)
        return self._flat

    def validate(self) -> None:
        S, H = self.params.S, self.params.n_heights
        for n in range(self.depth + 1):
            if self.count(n) != (S * H) ** n:
                raise ValueError(f"scale {n} has {self.count(n)} boxes")
            tol = 1e-12 * float(self.x1[0][0])
            if np.any(self.x1[n] <= self.x0[n]) or np.any(self.x0[n][1:] < self.x1[n][:-1] - tol):
                raise ValueError(f"scale {n} boxes overlap or are degenerate")
            if n:
                p = self.parent[n]
                if (np.any(self.x0[n] < self.x0[n - 1][p] - tol)
                        or np.any(self.x1[n] > self.x1[n - 1][p] + tol)):
                    raise ValueError(f"scale {n} boxes leave their parents")
                per = np.zeros((self.count(n - 1), H), np.int64)
                np.add.at(per, (p, self.height[n] - self.params.m_low), 1)
                if np.any(per != S):
                    raise ValueError(f"scale {n} children per height differ from {S}")


@dataclass
class FlatFamily:
    """All scales concatenated, for compiled kernels."""

    offsets: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    height: np.ndarray
    cstart: np.ndarray
    cend: np.ndarray

    @classmethod
    def from_family(cls, fam: SelectedFamily) -> "FlatFamily":
        counts = [fam.count(n) for n in range(fam.depth + 1)]
        off = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        cs, ce = [], []
        for n in range(fam.depth + 1):
            ptr = fam.child_ptr(n)
            base = off[n + 1] if n < fam.depth else off[-1]
            cs.append(ptr[:-1] + base)
            ce.append(ptr[1:] + base)
        return cls(off, np.concatenate(fam.x0), np.concatenate(fam.x1),
                   np.concatenate(fam.height).astype(np.int64),
                   np.concatenate(cs).astype(np.int64), np.concatenate(ce).astype(np.int64))


@numba.njit(cache=True)
def _select_level(boxes, pdir, cdir, ptr, clab, need_label, mlo, mhi, S):
    H = mhi - mlo + 1
    nb = boxes.shape[0]
    chosen = np.empty(nb * H * S, np.int64)
    heights = np.empty(nb * H * S, np.int64)
    parents = np.empty(nb * H * S, np.int64)
    cnt = np.empty(H, np.int64)
    w = 0
    for b in range(nb):
        p = boxes[b]
        cnt[:] = 0
        lam = 0
        for j in range(ptr[p], ptr[p + 1]):
            st = cdir[j] * pdir[p]
            if st > 0 and mlo <= lam <= mhi and clab[j] >= need_label and cnt[lam - mlo] < S:
                cnt[lam - mlo] += 1
                chosen[w] = j
                heights[w] = lam
                parents[w] = b
                w += 1
            lam += st
        for h in range(H):
            if cnt[h] < S:
                return chosen[:0], heights[:0], parents[:0], b, h + mlo, cnt[h]
    return chosen[:w], heights[:w], parents[:w], -1, 0, 0


def select_family(tree: CrossingTree, labels: GoodnessLabels, params: GoodnessParams,
                  depth: int) -> SelectedFamily:
    if depth > tree.max_depth:
        raise DepthExhaustedError("family deeper than the tree")
    if labels.labels[0][0] < depth:
        raise SelectionError(0, 0, params.m_low, int(labels.labels[0][0]), depth)
    starts = tree.start_times()
    boxes = np.zeros(1, np.int64)
    x0, x1 = [starts[0][:1].copy()], [starts[0][:1] + tree.duration[0][:1]]
    ell, hts, par = [np.zeros(1, np.int64)], [np.zeros(1, np.int64)], [np.full(1, -1)]
    for n in range(depth):
        ch, h, p, bad, bad_h, found = _select_level(
            boxes, tree.direction[n], tree.direction[n + 1], tree.child_ptr[n],
            labels.labels[n + 1], depth - n - 1, params.m_low, params.m_high, params.S)
        if bad >= 0:
            raise SelectionError(n, int(boxes[bad]), int(bad_h), int(found), params.S)
        x0.append(starts[n + 1][ch])
        x1.append(starts[n + 1][ch] + tree.duration[n + 1][ch])
        ell.append(params.K * ell[-1][p] + h)
        hts.append(h)
        par.append(p)
        boxes = ch
    return SelectedFamily(params, depth, x0, x1, ell, hts, par, tree.duration_mode)


@numba.njit(cache=True)
def _good_walks(keys, K, mlo, mhi, S, max_attempts):
    n = keys.shape[0]
    H = mhi - mlo + 1
    wkeys = np.empty(n, np.uint64)
    lens = np.empty(n, np.int64)
    cnt = np.empty(H, np.int64)
    for i in range(n):
        found = False
        for a in range(max_attempts):
            wk = nb_derive_key(keys[i], a, SALT_RETRY)
            cnt[:] = 0
            x = 0
            t = 0
            while x < K:
                u = nb_uniform(wk, t)
                t += 1
                if u * (2 * (x + K)) < x + K + 1:
                    if mlo <= x <= mhi:
                        cnt[x - mlo] += 1
                    x += 1
                else:
                    x -= 1
            ok = True
            for h in range(H):
                if cnt[h] < S:
                    ok = False
                    break
            if ok:
                wkeys[i] = wk
                lens[i] = t
                found = True
                break
        if not found:
            lens[i] = -1
    return wkeys, lens


@numba.njit(cache=True)
def _walk_children(wkeys, lens, K, mlo, mhi, S):
    """Steps of accepted walks plus, per step, the selection slot (-1 if unused)."""
    n = wkeys.shape[0]
    H = mhi - mlo + 1
    ptr = np.zeros(n + 1, np.int64)
    for i in range(n):
        ptr[i + 1] = ptr[i] + lens[i]
    pick = np.full(ptr[n], -1, np.int64)
    hts = np.zeros(ptr[n], np.int64)
    cnt = np.empty(H, np.int64)
    for i in range(n):
        cnt[:] = 0
        x = 0
        t = 0
        while x < K:
            u = nb_uniform(wkeys[i], t)
            j = ptr[i] + t
            if u * (2 * (x + K)) < x + K + 1:
                if mlo <= x <= mhi and cnt[x - mlo] < S:
                    cnt[x - mlo] += 1
                    pick[j] = 1
                    hts[j] = x
                x += 1
            else:
                x -= 1
            t += 1
    return ptr, pick, hts


def sample_good_family(params: GoodnessParams, depth: int, rng, durations: str = "sampled",
                       max_attempts: int = 100_000) -> SelectedFamily:
    """Draw a nested family directly, conditioning each box's child walk on
    (r, s)-goodness and keeping the earliest S up-children per height.

    Unselected children and boxes at the deepest scale receive exit-time
    durations at their own scale, so widths have the same law as in a
    crossing tree conditioned on the selection.
    """
    if params.s * params.K < 1:
        raise ValueError("sK must be at least 1 to select children")
    if durations not in ("sampled", "mean"):
        raise ValueError(f"unknown duration mode {durations!r}")
    stream = as_stream(rng)
    K = params.K
    keys = [np.array([stream.key], np.uint64)]
    walks = []
    for n in range(depth):
        wk, lens = _good_walks(keys[n], K, params.m_low, params.m_high, params.S,
                               max_attempts)
        if np.any(lens < 0):
            raise RuntimeError(f"no good walk within {max_attempts} attempts at scale {n}")
        ptr, pick, hts = _walk_children(wk, lens, K, params.m_low, params.m_high, params.S)
        counts = np.diff(ptr)
        sib = np.arange(ptr[-1]) - np.repeat(ptr[:-1], counts)
        ckeys = _derive(np.repeat(wk, counts), sib)
        sel = np.flatnonzero(pick >= 0)
        walks.append((ptr, sel, hts[sel], ckeys))
        keys.append(ckeys[sel])

    def durs(k, n):
        if durations == "mean":
            return np.full(len(k), float(K) ** (-2 * n))
        return leaf_exit_times(k, stream) * float(K) ** (-2 * n)

    box_dur = durs(keys[depth], depth)
    all_dur = [None] * depth
    for n in range(depth - 1, -1, -1):
        ptr, sel, _, ckeys = walks[n]
        d = durs(ckeys, n + 1)
        d[sel] = box_dur
        all_dur[n] = d
        box_dur = _group_sum(d, ptr)
    x0 = [np.zeros(1)]
    x1 = [box_dur.copy()]
    ell, hts, par = [np.zeros(1, np.int64)], [np.zeros(1, np.int64)], [np.full(1, -1)]
    for n in range(depth):
        ptr, sel, h, _ = walks[n]
        cs, _ = _group_prefix(all_dur[n], ptr, x0[n])
        p = np.searchsorted(ptr, sel, side="right") - 1
        x0.append(cs[sel])
        x1.append(cs[sel] + all_dur[n][sel])
        ell.append(K * ell[n][p] + h)
        hts.append(h)
        par.append(p)
    return SelectedFamily(params, depth, x0, x1, ell, hts, par, durations)


def _derive(keys, idx):
    from .rng import derive_key
    return derive_key(keys, idx, SALT_CHILD)


# ---------------------------------------------------------------- rectangles

@dataclass
class GammaLayer:
    scale: int
    x0: np.ndarray
    x1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray

    @property
    def areas(self) -> np.ndarray:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def area(self) -> float:
        return float(self.areas.sum())


def gamma_layers(family: SelectedFamily) -> list[GammaLayer]:
    """Extended rectangles per scale, clipped to their parent's rectangle."""
    K, r = family.params.K, float(family.params.r)
    out = []
    for n in range(family.depth + 1):
        unit = float(K) ** -n
        y0 = (family.ell[n] - 3 * r) * unit
        y1 = (family.ell[n] + 1.0) * unit
        if n:
            # deep children of low boxes can poke out of the parent's band;
            # the field vanishes there, so they are clipped (possibly to empty)
            prev = out[-1]
            y0 = np.maximum(y0, prev.y0[family.parent[n]])
            y1 = np.maximum(np.minimum(y1, prev.y1[family.parent[n]]), y0)
        out.append(GammaLayer(n, family.x0[n], family.x1[n], y0, y1))
    return out
