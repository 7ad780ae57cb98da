"""Level sets of sampled graphs, dyadic covers of them, excursion-maximum
laws, and axis-parallel detour paths that cross the graph only finitely often.

Times on a sampled path are grid indices; covers express endpoints as integer
numerators over ``2**DEPTH_CAP`` in units of the path horizon, so the size
conditions are decided in integer arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, getcontext

import numba
import numpy as np
from scipy.stats import ks_2samp, linregress

from .paths import (FinePath, bridge_maxima, bridge_ranges, excursion_max_and_bridge_range,
                    sample_excursion_max, sample_exit_times)
from .percolation import smoothed_se, wilson_interval
from .rng import as_stream

DEPTH_CAP = 24
ONE = 1 << DEPTH_CAP


# ---------------------------------------------------------------- level sets

@dataclass
class LevelSetSample:
    """Clusters of grid cells where the path straddles ``y``.

    ``clusters[i] = (first, stop)`` covers the time span ``[first*h, stop*h]``;
    cells ``first .. stop-1`` all straddle and the neighbours do not.
    """

    path: FinePath
    y: float
    clusters: np.ndarray

    @property
    def h(self) -> float:
        return self.path.h

    @property
    def n_cells(self) -> int:
        return len(self.path.values) - 1

    @property
    def empty(self) -> bool:
        return len(self.clusters) == 0

    def spans(self) -> np.ndarray:
        return self.clusters * self.h


def _straddle_runs(hit: np.ndarray) -> np.ndarray:
    if not hit.any():
        return np.zeros((0, 2), dtype=np.int64)
    d = np.diff(np.concatenate([[0], hit.view(np.int8), [0]]))
    first = np.flatnonzero(d == 1)
    stop = np.flatnonzero(d == -1)
    return np.stack([first, stop], axis=1).astype(np.int64)


def extract_level_set(path: FinePath, y: float) -> LevelSetSample:
    v = np.asarray(path.values, dtype=float) - y
    hit = v[:-1] * v[1:] <= 0
    return LevelSetSample(path, float(y), _straddle_runs(hit))


# ---------------------------------------------------------------- covers

@dataclass
class CoverFamily:
    """Disjoint dyadic intervals covering a level set.

    ``lo``/``hi`` are numerators over ``2**DEPTH_CAP``. An interval is open
    except at 0 or 1, where it may be closed. ``first``/``last`` index the
    clusters it contains, so ``a*`` and ``b*`` are the start of the first and
    the end of the last.
    """

    k: int
    lo: np.ndarray
    hi: np.ndarray
    first: np.ndarray
    last: np.ndarray
    a_star: np.ndarray
    b_star: np.ndarray
    delta: float | None
    method: str
    size_ok: bool
    root_sum_ok: bool

    @property
    def feasible(self) -> bool:
        return self.size_ok and self.root_sum_ok

    @property
    def m(self) -> int:
        return len(self.lo)

    def lengths(self) -> np.ndarray:
        return (self.hi - self.lo) / ONE

    def root_sum(self) -> float:
        return float(np.sqrt(self.lengths()).sum())


@dataclass
class InfeasibleCover:
    k: int
    reason: str
    best_root_sum: float = math.inf
    best_max_length: float = math.inf


def _size_ok(lo, hi, k) -> bool:
    return bool(np.all((hi - lo) * k < ONE))


def _root_sum_ok(lo, hi, k) -> bool:
    """sum sqrt((hi-lo)/2^cap) < 1/k, decided at 50 significant digits."""
    getcontext().prec = 50
    total = sum((Decimal(int(d)).sqrt() for d in (hi - lo)), Decimal(0))
    return total * k < Decimal(1 << (DEPTH_CAP // 2))


def _snap_left(start: int, prev_stop: int, n: int, depth: int):
    """Largest dyadic strictly inside (prev_stop/n, start/n), as a numerator at the cap."""
    if start == 0:
        return 0
    for d in range(depth, DEPTH_CAP + 1):
        p = -((-start << d) // n) - 1     # ceil(start 2^d / n) - 1
        if p * n > prev_stop << d:
            return p << (DEPTH_CAP - d)
    return None


def _snap_right(stop: int, next_start: int, n: int, depth: int):
    if stop == n:
        return ONE
    for d in range(depth, DEPTH_CAP + 1):
        q = ((stop << d) // n) + 1
        if q * n < next_start << d:
            return q << (DEPTH_CAP - d)
    return None


def _snapped_ends(ls: LevelSetSample, depth: int):
    """Candidate left and right cover endpoints for every cluster."""
    n = ls.n_cells
    cl = ls.clusters
    m = len(cl)
    left = np.empty(m, dtype=np.int64)
    right = np.empty(m, dtype=np.int64)
    for i in range(m):
        prev_stop = cl[i - 1, 1] if i else -1
        next_start = cl[i + 1, 0] if i + 1 < m else n + 1
        a = _snap_left(int(cl[i, 0]), int(prev_stop), n, depth)
        b = _snap_right(int(cl[i, 1]), int(next_start), n, depth)
        if a is None or b is None:
            return None
        left[i] = a
        right[i] = b
    return left, right


@numba.njit(cache=True)
def _min_root_cover(left, right, limit):
    """Grouping of consecutive clusters minimising sum sqrt(length), each length < limit."""
    m = len(left)
    best = np.full(m + 1, np.inf)
    prev = np.full(m + 1, -1, np.int64)
    best[0] = 0.0
    for j in range(1, m + 1):
        for i in range(j - 1, -1, -1):
            ln = right[j - 1] - left[i]
            if ln >= limit:
                break
            c = best[i] + math.sqrt(ln)
            if c < best[j]:
                best[j] = c
                prev[j] = i
    return best[m], prev


def _family(ls, k, left, right, groups, delta, method) -> CoverFamily:
    first = np.array([g[0] for g in groups], dtype=np.int64)
    last = np.array([g[1] for g in groups], dtype=np.int64)
    lo = left[first]
    hi = right[last]
    return CoverFamily(k, lo, hi, first, last,
                       ls.clusters[first, 0] * ls.h, ls.clusters[last, 1] * ls.h,
                       delta, method, _size_ok(lo, hi, k), _root_sum_ok(lo, hi, k))


def delta_schedule(n_cells: int, ratio: float = 2.0 ** -0.25) -> np.ndarray:
    """Descending gap thresholds, in cells, from the whole horizon down to one cell."""
    steps = int(math.ceil(math.log(n_cells) / -math.log(ratio))) + 1
    return np.unique(np.ceil(n_cells * ratio ** np.arange(steps)).astype(np.int64))[::-1]


def build_cover(ls: LevelSetSample, k: int, dyadic_depth: int = 20):
    """Cover of the sampled level set satisfying the size and root-sum conditions at k.

    Clusters separated by gaps shorter than a threshold are grouped; the
    threshold walks down a geometric schedule and the first grouping meeting
    both conditions wins. If none does, an optimal grouping is tried before
    giving up with an ``InfeasibleCover``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not 0 <= dyadic_depth <= DEPTH_CAP:
        raise ValueError(f"dyadic_depth must lie in [0, {DEPTH_CAP}]")
    if ls.empty:
        z = np.zeros(0, dtype=np.int64)
        return CoverFamily(k, z, z, z, z, np.zeros(0), np.zeros(0), None, "empty", True, True)
    ends = _snapped_ends(ls, dyadic_depth)
    if ends is None:
        return InfeasibleCover(k, "no dyadic point inside a gap at the depth cap")
    left, right = ends
    gaps = ls.clusters[1:, 0] - ls.clusters[:-1, 1]
    best_sum, best_len = math.inf, math.inf
    for thr in delta_schedule(ls.n_cells):
        cut = np.flatnonzero(gaps >= thr)
        firsts = np.concatenate([[0], cut + 1])
        lasts = np.concatenate([cut, [len(left) - 1]])
        ln = right[lasts] - left[firsts]
        roots = float(np.sqrt(ln / ONE).sum())
        if roots < best_sum:
            best_sum, best_len = roots, float(ln.max() / ONE)
        if np.all(ln * k < ONE) and roots * k < 1.0 + 1e-9:
            fam = _family(ls, k, left, right, list(zip(firsts, lasts)), thr * ls.h, "threshold")
            if fam.feasible:
                return fam
    total, prev = _min_root_cover(left.astype(np.float64), right.astype(np.float64),
                                  float(ONE) / k)
    if math.isfinite(total):
        groups = []
        j = len(left)
        while j > 0:
            i = prev[j]
            groups.append((i, j - 1))
            j = i
        fam = _family(ls, k, left, right, groups[::-1], None, "optimal")
        if fam.feasible:
            return fam
        best_sum = min(best_sum, fam.root_sum())
    return InfeasibleCover(k, "root-sum condition fails at this resolution", best_sum, best_len)


def crossing_stats(cover: CoverFamily, ls: LevelSetSample) -> tuple[np.ndarray, float]:
    """Largest distance from the level over ``[a*, b*]`` of each interval, and their sum."""
    v = np.abs(np.asarray(ls.path.values) - ls.y)
    M = np.zeros(cover.m)
    for j in range(cover.m):
        a = ls.clusters[cover.first[j], 0]
        b = ls.clusters[cover.last[j], 1]
        M[j] = v[a:b + 1].max()
    return M, float(M.sum())


@dataclass
class CoverDecay:
    ks: np.ndarray
    feasible: np.ndarray
    S: np.ndarray
    root_sums: np.ndarray
    slope: float
    slope_se: float


def fit_decay(ks, S) -> tuple[float, float]:
    ks = np.asarray(ks, float)
    S = np.asarray(S, float)
    ok = np.isfinite(S) & (S > 0)
    if ok.sum() < 3:
        return math.nan, math.nan
    fit = linregress(np.log(ks[ok]), np.log(S[ok]))
    return float(fit.slope), float(fit.stderr)


def cover_decay(path: FinePath, y: float, ks=range(2, 9), dyadic_depth: int = 20) -> CoverDecay:
    """Covers for each k on one level, with S_k and a log-log decay fit over the feasible ones."""
    ls = extract_level_set(path, y)
    ks = np.asarray(list(ks))
    feas = np.zeros(len(ks), bool)
    S = np.full(len(ks), np.nan)
    roots = np.full(len(ks), np.nan)
    for i, k in enumerate(ks):
        cov = build_cover(ls, int(k), dyadic_depth)
        if isinstance(cov, CoverFamily):
            feas[i] = True
            S[i] = crossing_stats(cov, ls)[1]
            roots[i] = cov.root_sum()
        else:
            roots[i] = cov.best_root_sum
    slope, se = fit_decay(ks[feas], S[feas])
    return CoverDecay(ks, feas, S, roots, slope, se)


def pooled_decay(decays: list[CoverDecay]) -> tuple[float, float]:
    """Common log-log slope across several levels, each with its own intercept."""
    xs, ys = [], []
    for d in decays:
        ok = d.feasible & np.isfinite(d.S) & (d.S > 0)
        if ok.sum() < 2:
            continue
        lk, ls_ = np.log(d.ks[ok]), np.log(d.S[ok])
        xs.append(lk - lk.mean())
        ys.append(ls_ - ls_.mean())
    if not xs:
        return math.nan, math.nan
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    sxx = float(x @ x)
    slope = float(x @ y) / sxx
    dof = max(len(x) - len(xs) - 1, 1)
    resid = y - slope * x
    return slope, math.sqrt(float(resid @ resid) / dof / sxx)


# ---------------------------------------------------------------- detour paths

@dataclass
class DetourPath:
    vertices: np.ndarray
    length: float
    level: float
    k: int | None
    S: float
    n_hops: int
    epsilon: float
    intersections: int | None = None

    @property
    def z(self):
        return tuple(self.vertices[0])

    @property
    def w(self):
        return tuple(self.vertices[-1])


class RouteInfeasible(RuntimeError):
    def __init__(self, tried: int, best_S: float, budget: float):
        super().__init__(f"no level within budget: {tried} covers tried, "
                         f"best excursion sum {best_S:.4g} vs budget {budget:.4g}")
        self.tried = tried
        self.best_S = best_S
        self.budget = budget


def default_levels(y0: float, eps: float, count: int = 16) -> np.ndarray:
    """Start level first, then evenly spread levels strictly inside (y0, y0 + eps/4)."""
    inner = y0 + eps / 4 * np.arange(1, count + 1) / (count + 1)
    return np.concatenate([[y0], inner])


def polyline_length(vertices: np.ndarray) -> float:
    d = np.diff(np.asarray(vertices, float), axis=0)
    return float(math.fsum(np.abs(d).sum(axis=1)))


def prune_polyline(vertices) -> np.ndarray:
    """Drop repeated vertices and fold back-and-forth runs along one axis line."""
    out: list[tuple[float, float]] = []
    for p in map(tuple, np.asarray(vertices, float)):
        if out and out[-1] == p:
            continue
        if len(out) >= 2:
            a, b = out[-2], out[-1]
            if (a[0] == b[0] == p[0]) or (a[1] == b[1] == p[1]):
                out[-1] = p
                if out[-2] == out[-1]:
                    out.pop()
                continue
        out.append(p)
    return np.array(out, float)


class _Window:
    """The graph restricted to [u, v] seen from level y, with its straddling runs."""

    def __init__(self, path: FinePath, y: float, u: float, v: float):
        n = len(path.values) - 1
        self.lo, self.hi = max(u, 0.0), min(v, path.T)
        if self.hi <= self.lo:
            self.first = np.zeros(0, np.int64)
            return
        i0 = min(int(math.floor(self.lo / path.h)), n - 1)
        i1 = min(int(math.ceil(self.hi / path.h)), n)
        seg = np.asarray(path.values[i0:i1 + 1], float) - y
        t = (i0 + np.arange(len(seg))) * path.h
        runs = _straddle_runs(seg[:-1] * seg[1:] <= 0)
        self.first, self.stop = runs[:, 0], runs[:, 1]
        self.a = np.maximum(t[self.first], self.lo)
        self.b = np.minimum(t[self.stop], self.hi)
        # grid points outside the window do not count; the clipped ends do
        self.dist = np.where((t >= self.lo) & (t <= self.hi), np.abs(seg), 0.0)
        self.edge_lo = abs(_graph_at(path, self.lo) - y)
        self.edge_hi = abs(_graph_at(path, self.hi) - y)

    @property
    def count(self) -> int:
        return len(self.first)

    def hops(self, k: int):
        """Clusters grouped by the size-1/k block of the window their start falls in.

        Returns hop starts, ends and the largest distance from the level over each.
        """
        if self.count == 0:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        width = (self.hi - self.lo) / k
        block = np.floor((self.a - self.lo) / width).astype(np.int64)
        gf = np.flatnonzero(np.diff(np.concatenate([[-1], block])))
        gl = np.concatenate([gf[1:] - 1, [self.count - 1]])
        idx = np.empty(2 * len(gf), np.int64)
        idx[0::2] = self.first[gf]
        idx[1::2] = self.stop[gl] + 1
        M = np.maximum.reduceat(np.concatenate([self.dist, [0.0]]), idx)[0::2]
        a, b = self.a[gf], self.b[gl]
        M = np.where(a == self.lo, np.maximum(M, self.edge_lo), M)
        M = np.where(b == self.hi, np.maximum(M, self.edge_hi), M)
        return a, b, M


def _graph_at(path: FinePath, t: float) -> float:
    """Linear interpolation of the sampled graph at time t."""
    n = len(path.values) - 1
    x = min(max(t / path.h, 0.0), float(n))
    i = min(int(x), n - 1)
    f = x - i
    return float(path.values[i] * (1 - f) + path.values[i + 1] * f)


def _level_route(u: float, v: float, y0: float, y: float, a, b, M) -> list[tuple[float, float]]:
    pts = [(u, y0), (u, y)]
    for aj, bj, Mj in zip(a, b, M):
        top = y + 2 * Mj
        pts += [(aj, y), (aj, top), (bj, top), (bj, y)]
    pts += [(v, y), (v, y0)]
    return pts


def route_detour(path: FinePath, z, w, eps: float, level_picker=None,
                 ks=(1, 2, 4, 8, 16, 32, 64, 128, 256)) -> DetourPath:
    """Axis-parallel path from z to w that hops over the graph near a nearby level.

    Endpoints at different heights are first joined by a vertical segment at
    z's time. On the remaining horizontal leg the path lifts to a level y just
    above, walks along it, and clears every block of the level set at height
    ``y + 2M``, M being the block's largest distance from y. A (level, k) pair
    is accepted when the level shift stays below eps/4 and the summed maxima
    below eps/8.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    z = (float(z[0]), float(z[1]))
    w = (float(w[0]), float(w[1]))
    flip = z[0] > w[0]
    if flip:
        # route from w's time to z's time, keeping the vertical leg at z's time
        u, v, yh = w[0], z[0], w[1]
    else:
        u, v, yh = z[0], w[0], w[1]
    picker = level_picker or default_levels
    budget = eps / 8
    best_S = math.inf
    tried = 0
    for y in picker(yh, eps):
        if not yh <= y < yh + eps / 4:
            continue
        win = _Window(path, y, u, v)
        for k in ks:
            tried += 1
            a, b, M = win.hops(k)
            S = math.fsum(M)
            best_S = min(best_S, S)
            if S >= budget:
                continue
            pts = _level_route(u, v, yh, y, a, b, M)
            pts = prune_polyline([z] + (pts[::-1] if flip else pts))
            return DetourPath(pts, polyline_length(pts), float(y), int(k), S, len(M), eps)
    raise RouteInfeasible(tried, best_S, budget)


def _vertical_hits(path: FinePath, x: float, y0: float, y1: float):
    if not 0 <= x <= path.T:
        return []
    g = _graph_at(path, x)
    lo, hi = min(y0, y1), max(y0, y1)
    return [(x, g)] if lo <= g <= hi else []


def _horizontal_hits(path: FinePath, x0, x1, c):
    """Crossings of the graph with the segment [x0, x1] x {c}; None if the graph runs along it."""
    vals, h = path.values, path.h
    lo, hi = max(min(x0, x1), 0.0), min(max(x0, x1), path.T)
    if hi < lo:
        return []
    i0 = int(math.floor(lo / h))
    i1 = min(int(math.ceil(hi / h)), len(vals) - 1)
    seg = vals[i0:i1 + 1] - c
    pts = []
    a, b = seg[:-1], seg[1:]
    flat = (a == 0) & (b == 0)
    if flat.any():
        return None
    cross = np.flatnonzero(a * b <= 0)
    for j in cross:
        da, db = a[j], b[j]
        s = 0.0 if da == db else da / (da - db)
        x = (i0 + j + s) * h
        if lo <= x <= hi:
            pts.append((x, c))
    return pts


def validate_detour(gamma: DetourPath, path: FinePath, tol: float = 1e-12) -> dict:
    """Recount crossings with the sampled graph and recompute the length."""
    vx = gamma.vertices
    pts = []
    axis_ok = True
    unbounded = False
    for (x0, y0), (x1, y1) in zip(vx[:-1], vx[1:]):
        if x0 == x1:
            pts += _vertical_hits(path, x0, y0, y1)
        elif y0 == y1:
            hits = _horizontal_hits(path, x0, x1, y0)
            if hits is None:
                unbounded = True
            else:
                pts += hits
        else:
            axis_ok = False
    # shared corners and cell vertices can be reported twice
    pts.sort()
    distinct = []
    for p in pts:
        if not distinct or abs(p[0] - distinct[-1][0]) > tol or abs(p[1] - distinct[-1][1]) > tol:
            distinct.append(p)
    length = polyline_length(vx)
    count = math.inf if unbounded else len(distinct)
    gamma.intersections = count
    return {
        "intersections": count,
        "length": length,
        "length_matches": abs(length - gamma.length) <= tol * max(1.0, gamma.length),
        "axis_parallel": axis_ok,
        "hop_bound": 2 * gamma.n_hops + 2 + (vx[0][1] != vx[-1][1]),
    }


# ---------------------------------------------------------------- excursion laws

@dataclass
class BridgeMaxReport:
    xs: np.ndarray
    empirical: np.ndarray
    target: np.ndarray
    sup_error: float


def bridge_max_check(length: float, n: int, trials: int, rng, xs=None,
                     refine: bool = True) -> BridgeMaxReport:
    """Empirical tail of the bridge maximum against exp(-2x^2/length)."""
    if length <= 0:
        raise ValueError("length must be positive")
    grid, cont = bridge_maxima(length, n, trials, rng, refine=refine)
    m = np.sort(cont if refine else grid)
    if xs is None:
        xs = np.linspace(0.0, 2.0 * math.sqrt(length), 81)
    xs = np.asarray(xs, float)
    emp = 1.0 - np.searchsorted(m, xs, side="left") / len(m)
    target = np.exp(-2 * xs ** 2 / length)
    return BridgeMaxReport(xs, emp, target, float(np.abs(emp - target).max()))


@dataclass
class IdentityReport:
    excursion_max: np.ndarray
    bridge_range: np.ndarray
    ks: float
    pvalue: float


def excursion_range_identity_check(length: float, n: int, trials: int, rng,
                                   exact_excursions: bool = True) -> IdentityReport:
    """Two-sample KS test between excursion maxima and bridge ranges of one length.

    By default excursion maxima come from their exact law and ranges from
    bridges refined between samples, so neither side carries grid bias.
    With ``exact_excursions=False`` both sides are raw grid samples.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    stream = as_stream(rng)
    if exact_excursions:
        exc = sample_excursion_max(stream.substream("excursion"), np.full(trials, length))
        rg = bridge_ranges(length, n, trials, stream.substream("range"))
    else:
        exc, rg = excursion_max_and_bridge_range(length, n, trials, stream)
    res = ks_2samp(exc, rg)
    return IdentityReport(exc, rg, float(res.statistic), float(res.pvalue))


@dataclass
class TailBoundReport:
    xs: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    se: np.ndarray
    violations: int


def geometric_lengths(total: float, count: int = 30) -> np.ndarray:
    return total * 2.0 ** -np.arange(1, count + 1)


def excursion_tail_bound_check(total: float, lengths, trials: int, rng, xs=None) -> TailBoundReport:
    """Tail of the largest of independent excursion maxima against 2 exp(-x^2 / 4 total).

    Only x at or above sqrt(4 total / e) is assessed; a violation is an
    empirical tail more than three standard errors above the bound.
    """
    lengths = np.asarray(lengths, float)
    if lengths.sum() > total * (1 + 1e-12):
        raise ValueError("sub-lengths must sum to at most the total")
    gen = as_stream(rng).substream("tail")
    draws = sample_excursion_max(gen, np.tile(lengths, (trials, 1)))
    M = np.sort(draws.max(axis=1))
    x0 = math.sqrt(4 * total / math.e)
    if xs is None:
        xs = np.linspace(x0, 4 * math.sqrt(total), 61)
    xs = np.asarray(xs, float)
    xs = xs[xs >= x0]
    hits = trials - np.searchsorted(M, xs, side="left")
    emp = hits / trials
    se = np.array([smoothed_se(int(k), trials) for k in hits])
    bound = 2 * np.exp(-xs ** 2 / (4 * total))
    return TailBoundReport(xs, emp, bound, se, int(np.sum(emp > bound + 3 * se)))


# ---------------------------------------------------------------- stitching

@dataclass
class StitchReport:
    a: float
    N: int
    trials: int
    first_mean: float
    p_exceed: float
    ci: tuple[float, float]
    table: list[tuple[float, int, float]] = field(default_factory=list)


def stitching_demo(a: float, N: int, trials: int, rng, qs=(0.01, 0.1, 0.5)) -> StitchReport:
    """Successive times to move distance a from the last stop, and the r^N schedule.

    Each step lasts a^2 times an exit time of (-1, 1). ``table`` lists
    (q, N', (1-q)^N') for N' = 1..N: the chance that N' independent pieces,
    each exceptional with probability q, all fail to be.
    """
    if a <= 0 or N < 1:
        raise ValueError("need a > 0 and N >= 1")
    steps = a * a * sample_exit_times(rng, trials * N).reshape(trials, N)
    totals = steps.sum(axis=1)
    hits = int(np.sum(totals >= 1.0))
    table = [(q, j, (1 - q) ** j) for q in qs for j in range(1, N + 1)]
    return StitchReport(a, N, trials, float(steps[:, 0].mean()), hits / trials,
                        wilson_interval(hits, trials), table)
