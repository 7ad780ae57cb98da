"""Sampling of conditioned lattice walks, crossing trees, exit times and
fine Brownian paths, bridges and excursions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np

from .rng import (SALT_CHILD, SALT_DURATION, SALT_WALK, RngStream, as_stream,
                  derive_key, hash_uniform, nb_derive_key, nb_uniform)


class ResourceBudgetError(RuntimeError):
    pass


def p_up(x, K: int):
    """Up-step probability of the walk conditioned to reach +K before -K."""
    return (x + K + 1) / (2 * (x + K))


# ---------------------------------------------------------------- walks

@numba.njit(cache=True)
def _walk_length(key, K):
    x = 0
    t = 0
    while x < K:
        u = nb_uniform(key, t)
        t += 1
        if u * (2 * (x + K)) < x + K + 1:
            x += 1
        else:
            x -= 1
    return t


@numba.njit(cache=True)
def _walk_fill(key, K, out, start):
    x = 0
    t = 0
    while x < K:
        u = nb_uniform(key, t)
        if u * (2 * (x + K)) < x + K + 1:
            out[start + t] = 1
            x += 1
        else:
            out[start + t] = -1
            x -= 1
        t += 1
    return t


@numba.njit(cache=True)
def _walks_batch(keys, K):
    n = keys.shape[0]
    offsets = np.empty(n + 1, np.int64)
    offsets[0] = 0
    for i in range(n):
        offsets[i + 1] = offsets[i] + _walk_length(keys[i], K)
    steps = np.empty(offsets[n], np.int8)
    for i in range(n):
        _walk_fill(keys[i], K, steps, offsets[i])
    return steps, offsets


def walk_steps(keys: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Conditioned walks for a batch of keys, as flat +-1 steps with CSR offsets."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    return _walks_batch(keys, int(K))


@dataclass
class LatticeWalkPath:
    K: int
    levels: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.int64)
        if lv.size < 1 or lv[0] != 0 or lv[-1] != self.K:
            raise ValueError("walk must start at 0 and end at K")
        if lv.size > 1 and (np.any(np.abs(np.diff(lv)) != 1) or lv.min() <= -self.K):
            raise ValueError("walk steps must be +-1 and stay above -K")
        self.levels = lv

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.levels)


def sample_conditioned_walk(K: int, rng) -> LatticeWalkPath:
    if K < 1:
        raise ValueError("K must be >= 1")
    key = np.array([as_stream(rng).key], dtype=np.uint64)
    steps, _ = walk_steps(derive_key(key, 0, SALT_WALK), K)
    return LatticeWalkPath(K, np.concatenate([[0], np.cumsum(steps)]))


def enumerate_walk_law(K: int, horizon: int = 200) -> dict[int, Fraction]:
    """Up-step law of the simple walk conditioned to hit +K before -K, by
    summing over every path of length <= horizon (exact rationals).

    Returns P(up | at x) for each interior state x; the truncation error
    shrinks geometrically in ``horizon``.
    """
    states = range(-K + 1, K)
    half = Fraction(1, 2)
    # back[s][x]: probability from x to be absorbed at +K within s steps
    back = [{x: Fraction(0) for x in range(-K, K + 1)}]
    back[0][K] = Fraction(1)
    for s in range(1, horizon + 1):
        prev = back[-1]
        cur = {-K: Fraction(0), K: Fraction(1)}
        for x in states:
            cur[x] = half * (prev[x + 1] + prev[x - 1])
        back.append(cur)
    fwd = {x: Fraction(0) for x in states}
    fwd[0] = Fraction(1)
    up = {x: Fraction(0) for x in states}
    visit = {x: Fraction(0) for x in states}
    for t in range(horizon):
        rem = horizon - t
        for x in states:
            if fwd[x]:
                visit[x] += fwd[x] * back[rem][x]
                up[x] += fwd[x] * half * back[rem - 1][x + 1]
        nxt = {x: Fraction(0) for x in states}
        for x in states:
            if fwd[x]:
                if x + 1 < K:
                    nxt[x + 1] += half * fwd[x]
                if x - 1 > -K:
                    nxt[x - 1] += half * fwd[x]
        fwd = nxt
    return {x: up[x] / visit[x] for x in states if visit[x]}


# ---------------------------------------------------------------- exit times
# sigma_1 = exit time of (-1, 1) by Brownian motion started at 0

N_SERIES = 30
_T_SWITCH = 0.5


@numba.njit(cache=True)
def _exit_cdf_small(t):
    s = 0.0
    for k in range(N_SERIES):
        term = math.erfc((2 * k + 1) / math.sqrt(2.0 * t))
        if term == 0.0:
            break
        s += term if k % 2 == 0 else -term
    return 2.0 * s


@numba.njit(cache=True)
def _exit_pdf_small(t):
    s = 0.0
    c = math.sqrt(2.0 / math.pi) * t ** -1.5
    for k in range(N_SERIES):
        a = 2 * k + 1
        term = a * math.exp(-a * a / (2.0 * t))
        if term == 0.0:
            break
        s += term if k % 2 == 0 else -term
    return c * s


@numba.njit(cache=True)
def _exit_sf_large(t):
    s = 0.0
    for k in range(N_SERIES):
        a = 2 * k + 1
        term = math.exp(-a * a * math.pi ** 2 * t / 8.0) / a
        if term == 0.0:
            break
        s += term if k % 2 == 0 else -term
    return 4.0 / math.pi * s


@numba.njit(cache=True)
def _exit_pdf_large(t):
    s = 0.0
    for k in range(N_SERIES):
        a = 2 * k + 1
        term = a * math.exp(-a * a * math.pi ** 2 * t / 8.0)
        if term == 0.0:
            break
        s += term if k % 2 == 0 else -term
    return math.pi / 2.0 * s


@numba.njit(cache=True)
def _exit_cdf_sf(t):
    if t <= 0.0:
        return 0.0, 1.0
    if t < _T_SWITCH:
        c = _exit_cdf_small(t)
        return c, 1.0 - c
    s = _exit_sf_large(t)
    return 1.0 - s, s


@numba.njit(cache=True)
def _exit_pdf(t):
    if t <= 0.0:
        return 0.0
    if t < _T_SWITCH:
        return _exit_pdf_small(t)
    return _exit_pdf_large(t)


@numba.njit(cache=True)
def _cdf_sf_pdf(t, kind):
    if kind == 0:
        c, s = _exit_cdf_sf(t)
        return c, s, _exit_pdf(t)
    c, s = _kennedy_cdf_sf(t)
    return c, s, _kennedy_pdf(t)


@numba.njit(cache=True)
def _invert(u, grid, gcdf, gsf, tol, kind):
    """Safeguarded Newton for F(t) = u, bracketed from a tabulated grid.

    Series terms that underflow are skipped, so each evaluation equals the
    full truncated sum. Stops once the bracket or step is below tol * t.
    """
    lower = u <= 0.5
    target = u if lower else 1.0 - u
    n = grid.shape[0]
    if lower:
        i = np.searchsorted(gcdf, target)
    else:
        # gsf decreases along the grid
        i = n - np.searchsorted(gsf[::-1], target, side="right")
    i = min(max(i, 1), n - 1)
    lo, hi = grid[i - 1], grid[i]
    if lower:
        f0, f1 = gcdf[i - 1], gcdf[i]
    else:
        f0, f1 = 1.0 - gsf[i - 1], 1.0 - gsf[i]
    t = 0.5 * (lo + hi)
    if f1 > f0:
        t = lo + (hi - lo) * min(max((u - f0) / (f1 - f0), 0.0), 1.0)
    for _ in range(200):
        c, s, d = _cdf_sf_pdf(t, kind)
        g = (c - target) if lower else (target - s)
        if g > 0.0:
            hi = t
        elif g < 0.0:
            lo = t
        else:
            return t
        tn = t - g / d if d > 0.0 else 0.5 * (lo + hi)
        if not (lo < tn < hi):
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= tol * t or hi - lo <= tol * t:
            return tn
        t = tn
    return t


@numba.njit(cache=True)
def _quantiles(u, grid, gcdf, gsf, kind):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        out[i] = _invert(u[i], grid, gcdf, gsf, 1e-13, kind)
    return out


_TABLES = {}


def _table(kind: int):
    if kind not in _TABLES:
        if kind == 0:
            grid, f = np.geomspace(1e-3, 80.0, 1025), _exit_cdf_sf
        else:
            grid, f = np.geomspace(0.05, 8.0, 1025), _kennedy_cdf_sf
        vals = np.array([f(t) for t in grid])
        _TABLES[kind] = (grid, np.ascontiguousarray(vals[:, 0]),
                         np.ascontiguousarray(vals[:, 1]))
    return _TABLES[kind]


def _exit_quantiles(u):
    return _quantiles(u, *_table(0), 0)


def _kennedy_quantiles(u):
    return _quantiles(u, *_table(1), 1)


def exit_time_cdf(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([_exit_cdf_sf(x)[0] for x in t])


def exit_time_sf(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([_exit_cdf_sf(x)[1] for x in t])


def exit_time_pdf(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([_exit_pdf(x) for x in t])


def exit_time_quantile(u) -> np.ndarray:
    return _exit_quantiles(np.ascontiguousarray(np.atleast_1d(u), dtype=float))


def exit_time_mgf(lam):
    """E exp(lam * sigma_1) = 1 / cos(sqrt(2 lam)), finite for lam < pi^2/8."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam >= math.pi ** 2 / 8):
        raise ValueError("moment generating function is infinite for lam >= pi^2/8")
    neg = lam < 0
    root = np.sqrt(np.abs(2 * lam))
    return np.where(neg, 1 / np.cosh(root), 1 / np.cos(root))


def sample_exit_times(rng, size: int) -> np.ndarray:
    u = as_stream(rng).generator().random(size)
    u = np.where(u == 0.0, 2.0 ** -54, u)
    return exit_time_quantile(u)


def sample_exit_time(rng) -> float:
    return float(sample_exit_times(rng, 1)[0])


# ---------------------------------------------------------------- Kennedy law
# law of the maximum of a unit-length Brownian excursion (= bridge range)

_X_SWITCH = 1.1


@numba.njit(cache=True)
def _kennedy_cdf_sf(x):
    if x <= 0.0:
        return 0.0, 1.0
    if x < _X_SWITCH:
        s = 0.0
        for k in range(1, N_SERIES + 1):
            s += k * k * math.exp(-math.pi ** 2 * k * k / (2 * x * x))
        c = math.sqrt(2 * math.pi) * math.pi ** 2 / x ** 3 * s
        return c, 1.0 - c
    s = 0.0
    for k in range(1, N_SERIES + 1):
        s += (4 * k * k * x * x - 1) * math.exp(-2 * k * k * x * x)
    return 1.0 - 2 * s, 2 * s


@numba.njit(cache=True)
def _kennedy_pdf(x):
    if x <= 0.0:
        return 0.0
    if x < _X_SWITCH:
        b = math.pi ** 2 / 2
        s = 0.0
        for k in range(1, N_SERIES + 1):
            kk = k * k
            s += kk * math.exp(-b * kk / (x * x)) * (2 * b * kk / x ** 6 - 3 / x ** 4)
        return math.sqrt(2 * math.pi) * math.pi ** 2 * s
    s = 0.0
    for k in range(1, N_SERIES + 1):
        kk = k * k
        s += 8 * kk * x * (4 * kk * x * x - 3) * math.exp(-2 * kk * x * x)
    return s


def excursion_max_cdf(x, length: float = 1.0) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float)) / math.sqrt(length)
    return np.array([_kennedy_cdf_sf(v)[0] for v in x])


def excursion_max_sf(x, length: float = 1.0) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float)) / math.sqrt(length)
    return np.array([_kennedy_cdf_sf(v)[1] for v in x])


def excursion_max_pdf(x, length: float = 1.0) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float)) / math.sqrt(length)
    return np.array([_kennedy_pdf(v) for v in x]) / math.sqrt(length)


def sample_excursion_max(rng, lengths) -> np.ndarray:
    """Exact maxima of independent excursions with the given lengths."""
    lengths = np.asarray(lengths, dtype=float)
    u = as_stream(rng).generator().random(lengths.shape)
    u = np.where(u == 0.0, 2.0 ** -54, u)
    q = _kennedy_quantiles(np.ascontiguousarray(u.ravel())).reshape(lengths.shape)
    return q * np.sqrt(lengths)


# ---------------------------------------------------------------- crossing trees

@numba.njit(cache=True)
def _group_prefix(dur, starts, parent_start):
    """Start times of children from parent starts and child durations.

    Returns (child_start, parent_duration) with the parent duration equal to
    the last running sum, so sibling extents tile the parent exactly.
    """
    n_par = starts.shape[0] - 1
    cs = np.empty(dur.shape[0])
    pd = np.empty(n_par)
    for p in range(n_par):
        acc = 0.0
        for j in range(starts[p], starts[p + 1]):
            cs[j] = parent_start[p] + acc
            acc += dur[j]
        pd[p] = acc
    return cs, pd


@numba.njit(cache=True)
def _group_sum(dur, starts):
    n_par = starts.shape[0] - 1
    pd = np.empty(n_par)
    for p in range(n_par):
        acc = 0.0
        for j in range(starts[p], starts[p + 1]):
            acc += dur[j]
        pd[p] = acc
    return pd


@dataclass
class CrossingTree:
    """Crossing tree stored level by level in time order.

    ``direction[d]``, ``duration[d]`` and ``key[d]`` describe the nodes at
    depth d; the children of node i at depth d are nodes
    ``child_ptr[d][i]:child_ptr[d][i+1]`` at depth d+1.
    """

    K: int
    max_depth: int
    direction: list[np.ndarray]
    key: list[np.ndarray]
    child_ptr: list[np.ndarray]
    duration: list[np.ndarray] = field(default_factory=list)
    duration_mode: str = "none"
    seed: int = 0

    @property
    def node_count(self) -> int:
        return int(sum(len(d) for d in self.direction))

    def children(self, depth: int, index: int) -> range:
        p = self.child_ptr[depth]
        return range(int(p[index]), int(p[index + 1]))

    def child_walk(self, depth: int, index: int) -> LatticeWalkPath:
        """Child walk of a node, in the node's own frame (ends at +K)."""
        ch = self.children(depth, index)
        steps = self.direction[depth + 1][ch.start:ch.stop] * self.direction[depth][index]
        return LatticeWalkPath(self.K, np.concatenate([[0], np.cumsum(steps)]))

    def start_times(self) -> list[np.ndarray]:
        if not self.duration:
            raise ValueError("tree has no durations")
        starts = [np.zeros(1)]
        for d in range(self.max_depth):
            cs, _ = _group_prefix(self.duration[d + 1], self.child_ptr[d], starts[d])
            starts.append(cs)
        return starts


def build_crossing_tree(K: int, max_depth: int, rng, node_cap: int = 10 ** 8,
                        durations: str | None = "mean") -> CrossingTree:
    if K < 2 or max_depth < 0:
        raise ValueError("need K >= 2 and max_depth >= 0")
    stream = as_stream(rng)
    direction = [np.ones(1, np.int8)]
    key = [np.array([stream.key], np.uint64)]
    child_ptr = []
    total = 1
    for d in range(max_depth):
        # each crossing has K^2 children on average
        if total + len(key[d]) * K * K > node_cap:
            raise ResourceBudgetError(
                f"crossing tree would exceed node cap {node_cap} at depth {d + 1}")
        steps, offsets = walk_steps(derive_key(key[d], 0, SALT_WALK), K)
        counts = np.diff(offsets)
        parent_dir = np.repeat(direction[d], counts)
        direction.append((steps * parent_dir).astype(np.int8))
        sib = np.arange(offsets[-1]) - np.repeat(offsets[:-1], counts)
        key.append(derive_key(np.repeat(key[d], counts), sib, SALT_CHILD))
        child_ptr.append(offsets)
        total += offsets[-1]
        if total > node_cap:
            raise ResourceBudgetError(f"crossing tree exceeds node cap {node_cap}")
    tree = CrossingTree(K, max_depth, direction, key, child_ptr, seed=stream.master_seed)
    if durations:
        assign_durations(tree, durations, stream)
    return tree


def leaf_exit_times(keys: np.ndarray, stream: RngStream) -> np.ndarray:
    u = hash_uniform(derive_key(keys ^ np.uint64(stream.key), 0, SALT_DURATION), 0)
    return exit_time_quantile(u)


def assign_durations(tree: CrossingTree, mode: str, rng) -> CrossingTree:
    D, K = tree.max_depth, tree.K
    scale = float(K) ** (-2 * D)
    if mode == "mean":
        leaf = np.full(len(tree.key[D]), scale)
    elif mode == "sampled":
        leaf = leaf_exit_times(tree.key[D], as_stream(rng)) * scale
    else:
        raise ValueError(f"unknown duration mode {mode!r}")
    dur = [None] * (D + 1)
    dur[D] = leaf
    for d in range(D - 1, -1, -1):
        dur[d] = _group_sum(dur[d + 1], tree.child_ptr[d])
    tree.duration = dur
    tree.duration_mode = mode
    return tree


# ---------------------------------------------------------------- fine paths

@dataclass
class FinePath:
    h: float
    values: np.ndarray

    @property
    def T(self) -> float:
        return self.h * (len(self.values) - 1)

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(len(self.values))


@dataclass
class BridgePath:
    length: float
    values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.values) - 1


@dataclass
class ExcursionPath(BridgePath):
    pass


def sample_fine_path(T: float, h: float, rng) -> FinePath:
    if T <= 0 or h <= 0:
        raise ValueError("T and h must be positive")
    n = int(round(T / h))
    if n < 1:
        raise ValueError("horizon shorter than one step")
    z = as_stream(rng).generator().standard_normal(n)
    vals = np.empty(n + 1)
    vals[0] = 0.0
    np.cumsum(z * math.sqrt(h), out=vals[1:])
    return FinePath(h, vals)


def _pinned(z: np.ndarray, length: float) -> np.ndarray:
    """Bridges from standard normals; last axis holds the n increments."""
    n = z.shape[-1]
    w = np.concatenate([np.zeros(z.shape[:-1] + (1,)),
                        np.cumsum(z, axis=-1) * math.sqrt(length / n)], axis=-1)
    frac = np.arange(n + 1) / n
    b = w - frac * w[..., -1:]
    b[..., -1] = 0.0
    return b


def sample_bridge(length: float, n: int, rng) -> BridgePath:
    if length <= 0 or n < 2:
        raise ValueError("need length > 0 and n >= 2")
    z = as_stream(rng).generator().standard_normal(n)
    return BridgePath(length, _pinned(z, length))


def sample_excursion(length: float, n: int, rng) -> ExcursionPath:
    """Excursion as the norm of a three-dimensional Brownian bridge."""
    if length <= 0 or n < 2:
        raise ValueError("need length > 0 and n >= 2")
    z = as_stream(rng).generator().standard_normal((3, n))
    b = _pinned(z, length)
    vals = np.sqrt((b * b).sum(axis=0))
    vals[0] = vals[-1] = 0.0
    return ExcursionPath(length, vals)


def holder_profile(path: FinePath, alpha: float) -> float:
    """Largest |B(s)-B(t)| / |s-t|^alpha over sample pairs at dyadic lags."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    v = np.asarray(path.values)
    if v.size < 2:
        raise ValueError("empty path")
    best = 0.0
    lag = 1
    while lag < v.size:
        d = np.abs(v[lag:] - v[:-lag]).max()
        best = max(best, d / (lag * path.h) ** alpha)
        lag *= 2
    return float(best)


def weierstrass_path(n: int, terms: int = 40) -> FinePath:
    """Deterministic half-Holder test curve sum_k 2^{-k/2} cos(2^k pi t) on [0,1]."""
    t = np.arange(n + 1) / n
    v = sum(2.0 ** (-k / 2) * np.cos(2.0 ** k * math.pi * t) for k in range(terms))
    return FinePath(1.0 / n, v - v[0])


# ---------------------------------------------------------------- Monte Carlo kernels

@numba.njit(cache=True)
def _fine_exit_upcrossings(gen, K, h, trials, max_steps):
    """Upcrossings of [0, 1/K] before exiting (-1, 1), oriented by exit side.

    Returns counts (and -1 where a path did not exit within max_steps) plus
    exit times and sides.
    """
    sd = math.sqrt(h)
    a = 1.0 / K
    counts = np.empty(trials, np.int64)
    times = np.empty(trials)
    sides = np.empty(trials, np.int8)
    for i in range(trials):
        x = 0.0
        up_pos = 0
        up_neg = 0
        armed_pos = True
        armed_neg = True
        n = 0
        while abs(x) < 1.0 and n < max_steps:
            x += sd * gen.standard_normal()
            n += 1
            if armed_pos and x >= a:
                up_pos += 1
                armed_pos = False
            elif x <= 0.0:
                armed_pos = True
            if armed_neg and -x >= a:
                up_neg += 1
                armed_neg = False
            elif -x <= 0.0:
                armed_neg = True
        times[i] = n * h
        if abs(x) < 1.0:
            counts[i] = -1
            sides[i] = 0
        elif x > 0:
            counts[i] = up_pos
            sides[i] = 1
        else:
            counts[i] = up_neg
            sides[i] = -1
    return counts, times, sides


def fine_exit_statistics(K: int, h: float, trials: int, rng, max_time: float = 60.0):
    """Fine-grid Brownian paths started at 0 and run until they leave (-1, 1).

    Returns (upcrossing counts of [0, 1/K] on the path reflected to exit at +1,
    exit times, exit sides).
    """
    gen = as_stream(rng).generator()
    return _fine_exit_upcrossings(gen, int(K), float(h), int(trials),
                                  int(max_time / h))


@numba.njit(cache=True)
def _bridge_maxima(gen, length, n, trials, refine):
    sd = math.sqrt(length / n)
    dt = length / n
    w = np.empty(n + 1)
    disc = np.empty(trials)
    cont = np.empty(trials)
    for i in range(trials):
        w[0] = 0.0
        for j in range(n):
            w[j + 1] = w[j] + sd * gen.standard_normal()
        end = w[n]
        best = 0.0
        prev = 0.0
        bestc = 0.0
        for j in range(1, n + 1):
            b = w[j] - end * j / n
            if j == n:
                b = 0.0
            if b > best:
                best = b
            if refine:
                u = gen.random()
                if u <= 0.0:
                    u = 2.0 ** -54
                d = b - prev
                m = 0.5 * (prev + b + math.sqrt(d * d - 2.0 * dt * math.log(u)))
                if m > bestc:
                    bestc = m
            prev = b
        disc[i] = best
        cont[i] = bestc
    return disc, cont


def bridge_maxima(length: float, n: int, trials: int, rng, refine: bool = True):
    """Maxima of Brownian bridges sampled on n steps.

    Returns (grid maxima, continuous maxima); the continuous maximum draws the
    exact supremum of each inter-sample bridge segment given its endpoints.
    """
    gen = as_stream(rng).generator()
    return _bridge_maxima(gen, float(length), int(n), int(trials), bool(refine))


@numba.njit(cache=True)
def _excursion_and_range(gen, length, n, trials):
    sd = math.sqrt(length / n)
    w = np.empty((4, n + 1))
    exc = np.empty(trials)
    rng_ = np.empty(trials)
    for i in range(trials):
        for c in range(4):
            w[c, 0] = 0.0
            for j in range(n):
                w[c, j + 1] = w[c, j] + sd * gen.standard_normal()
        best = 0.0
        hi = 0.0
        lo = 0.0
        for j in range(n + 1):
            f = j / n
            s = 0.0
            for c in range(3):
                b = w[c, j] - f * w[c, n]
                s += b * b
            if s > best:
                best = s
            b = w[3, j] - f * w[3, n]
            if b > hi:
                hi = b
            if b < lo:
                lo = b
        exc[i] = math.sqrt(best)
        rng_[i] = hi - lo
    return exc, rng_


def excursion_max_and_bridge_range(length: float, n: int, trials: int, rng):
    """Independent samples of excursion maxima and of bridge ranges."""
    gen = as_stream(rng).generator()
    return _excursion_and_range(gen, float(length), int(n), int(trials))


@numba.njit(cache=True)
def _bridge_ranges(gen, length, n, trials):
    dt = length / n
    sd = math.sqrt(dt)
    w = np.empty(n + 1)
    out = np.empty(trials)
    for i in range(trials):
        w[0] = 0.0
        for j in range(n):
            w[j + 1] = w[j] + sd * gen.standard_normal()
        end = w[n]
        hi = 0.0
        lo = 0.0
        prev = 0.0
        for j in range(1, n + 1):
            b = 0.0 if j == n else w[j] - end * j / n
            d = b - prev
            u = max(gen.random(), 2.0 ** -54)
            top = 0.5 * (prev + b + math.sqrt(d * d - 2.0 * dt * math.log(u)))
            u = max(gen.random(), 2.0 ** -54)
            bot = 0.5 * (prev + b - math.sqrt(d * d - 2.0 * dt * math.log(u)))
            hi = max(hi, top)
            lo = min(lo, bot)
            prev = b
        out[i] = hi - lo
    return out


def bridge_ranges(length: float, n: int, trials: int, rng) -> np.ndarray:
    """Ranges of Brownian bridges; each segment's extremes are drawn from their
    exact law given the sampled endpoints (maximum and minimum independently)."""
    gen = as_stream(rng).generator()
    return _bridge_ranges(gen, float(length), int(n), int(trials))
