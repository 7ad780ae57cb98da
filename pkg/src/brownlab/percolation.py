"""Monte Carlo checks of good-box percolation: goodness probability, the
child-count law, the survival recursion and the probabilistic ingredients
behind it (gambler's ruin, local times, exit-time tails, binomial tails)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numba
import numpy as np
from scipy.stats import binomtest

from .boxes import GoodnessParams, forest_labels
from .paths import FinePath, exit_time_mgf, sample_exit_times
from .rng import SALT_CHILD, as_stream, derive_key, nb_derive_key, nb_uniform


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def smoothed_se(k: int, n: int) -> float:
    """Standard error with add-two smoothing; stays positive when k is 0 or n."""
    p = (k + 2) / (n + 4)
    return math.sqrt(p * (1 - p) / (n + 4))


def trial_keys(rng, trials: int) -> np.ndarray:
    return derive_key(np.uint64(as_stream(rng).key), np.arange(trials), SALT_CHILD)


# ---------------------------------------------------------------- child counts

@numba.njit(cache=True)
def _band_counts(keys, K):
    """Up-steps from every level -K+1..K-1 of the conditioned walk."""
    n = keys.shape[0]
    out = np.zeros((n, 2 * K - 1), np.int32)
    for i in range(n):
        wk = nb_derive_key(keys[i], 0, 0x5A17)
        x = 0
        t = 0
        while x < K:
            u = nb_uniform(wk, t)
            t += 1
            if u * (2 * (x + K)) < x + K + 1:
                out[i, x + K - 1] += 1
                x += 1
            else:
                x -= 1
    return out


@dataclass
class EmpiricalChildDist:
    """Per-trial upcrossing counts A_m, columns ordered by height."""

    params: GoodnessParams
    counts: np.ndarray
    heights: np.ndarray

    @property
    def trials(self) -> int:
        return self.counts.shape[0]

    def at(self, m) -> np.ndarray:
        return self.counts[:, np.searchsorted(self.heights, m)]

    def admissible(self) -> np.ndarray:
        lo = np.searchsorted(self.heights, self.params.m_low)
        return self.counts[:, lo:lo + self.params.n_heights]

    def marginal_tallies(self) -> dict[int, np.ndarray]:
        return {int(m): np.bincount(self.counts[:, j]) for j, m in enumerate(self.heights)}


def estimate_child_distribution(params: GoodnessParams, trials: int, rng) -> EmpiricalChildDist:
    if trials < 1:
        raise ValueError("trials must be positive")
    counts = _band_counts(trial_keys(rng, trials), params.K)
    return EmpiricalChildDist(params, counts, np.arange(-params.K + 1, params.K))


@dataclass
class QEstimate:
    q: float
    ci: tuple[float, float]
    successes: int
    trials: int

    @property
    def se(self) -> float:
        return binomial_se(self.q, self.trials)


def estimate_q(params: GoodnessParams, trials: int, rng, band: str = "admissible",
               dist: EmpiricalChildDist | None = None) -> QEstimate:
    """Fraction of conditioned crossings with >= ceil(cK) upcrossings per height.

    ``band="admissible"`` uses the goodness heights; ``band="traversed"``
    uses heights 0..K-1, which every crossing must pass through.
    """
    dist = dist or estimate_child_distribution(params, trials, rng)
    if band == "admissible":
        A = dist.admissible()
    elif band == "traversed":
        A = dist.counts[:, params.K - 1:]
    else:
        raise ValueError(f"unknown band {band!r}")
    k = int(np.count_nonzero(np.all(A >= params.C, axis=1)))
    n = dist.trials
    return QEstimate(k / n, wilson_interval(k, n), k, n)


# ---------------------------------------------------------------- F and alpha

def binomial_upper_tail(a: int, t: float, k: int) -> float:
    """P[Bin(a, t) >= k], summed exactly term by term."""
    if k <= 0:
        return 1.0
    if k > a:
        return 0.0
    return math.fsum(math.comb(a, j) * t ** j * (1 - t) ** (a - j) for j in range(k, a + 1))


def binomial_lower_tail(a: int, t: float, k: int) -> float:
    """P[Bin(a, t) < k]."""
    if k <= 0:
        return 0.0
    return math.fsum(math.comb(a, j) * t ** j * (1 - t) ** (a - j) for j in range(min(k, a + 1)))


def evaluate_F(t: float, dist: EmpiricalChildDist, params: GoodnessParams | None = None) -> float:
    """Empirical mean of prod_m P[Bin(A_m, t) >= ceil(sK)]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    params = params or dist.params
    A = dist.admissible()
    table = np.array([binomial_upper_tail(a, t, params.S) for a in range(int(A.max()) + 1)])
    prod = np.prod(table[A], axis=1)
    return math.fsum(prod) / len(prod)


@dataclass
class SurvivalCurve:
    alphas: np.ndarray
    limit: float
    residual: float
    iterations: int
    regime_holds: bool
    regime_min: float


def iterate_alpha(dist: EmpiricalChildDist, params: GoodnessParams | None = None,
                  n_max: int = 10, tol: float = 1e-13, max_iter: int = 100_000,
                  regime_grid: int = 100) -> SurvivalCurve:
    params = params or dist.params
    alphas = [evaluate_F(1.0, dist, params)]
    while len(alphas) < n_max:
        alphas.append(evaluate_F(alphas[-1], dist, params))
    a = alphas[-1]
    it = len(alphas)
    while it < max_iter:
        b = evaluate_F(a, dist, params)
        it += 1
        if abs(b - a) < tol:
            a = b
            break
        a = b
    residual = abs(evaluate_F(a, dist, params) - a)
    grid = np.linspace(0.75, 1.0, regime_grid + 1)[1:]
    fv = np.array([evaluate_F(t, dist, params) for t in grid])
    return SurvivalCurve(np.array(alphas), a, residual, it, bool(np.all(fv > 0.75)),
                         float(fv.min()))


def direct_label_fraction(params: GoodnessParams, n: int, trials: int, rng) -> tuple[int, int]:
    """Independent roots whose goodness label reaches n: (count, trials)."""
    labels = forest_labels(trial_keys(rng, trials), params, n)
    return int(np.count_nonzero(labels >= n)), trials


# ---------------------------------------------------------------- Chernoff audit

@dataclass
class BinomialBound:
    exact: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.exact <= self.bound


def binomial_bound_check(cK: int, sK: int, t: float) -> BinomialBound:
    """Exact P[Bin(cK, t) < sK] against exp(cK/2 * log(4t(1-t)))."""
    if not 0.75 < t < 1.0:
        raise ValueError("t must lie in (3/4, 1)")
    if cK < 1 or sK != math.ceil(cK / 2):
        raise ValueError("need cK >= 1 and sK = ceil(cK/2)")
    return BinomialBound(binomial_lower_tail(cK, t, sK),
                         math.exp(0.5 * cK * math.log(4 * t * (1 - t))))


# ---------------------------------------------------------------- gambler's ruin

@numba.njit(cache=True)
def _ruin(gen, up, down, trials):
    hits = 0
    for _ in range(trials):
        x = 0
        while -down < x < up:
            x += 1 if gen.random() < 0.5 else -1
        if x == up:
            hits += 1
    return hits


@dataclass
class RuinCheck:
    p_hat: float
    target: float
    se: float
    trials: int

    @property
    def z(self) -> float:
        return (self.p_hat - self.target) / self.se if self.se > 0 else 0.0


def gamblers_ruin_check(r, trials: int, rng) -> RuinCheck:
    """P[hit 1 before -3r] by a simple walk on the grid 1/denominator(3r)."""
    three_r = 3 * Fraction(r).limit_denominator(10 ** 6)
    if three_r <= 0:
        raise ValueError("r must be positive")
    q = three_r.denominator
    hits = _ruin(as_stream(rng).generator(), q, three_r.numerator, int(trials))
    p = hits / trials
    target = float(three_r / (1 + three_r))
    return RuinCheck(p, target, binomial_se(target, trials), trials)


# ---------------------------------------------------------------- local times

@dataclass
class OccupationProfile:
    edges: np.ndarray
    occupation: np.ndarray
    outside: float
    hitting_time: float

    @property
    def width(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def local_time(self) -> np.ndarray:
        return self.occupation / self.width


def occupation_local_time_check(path: FinePath, y_range: tuple[float, float],
                                eps: float) -> OccupationProfile:
    """Occupation of bands of width 2*eps before the path first reaches 1."""
    v = np.asarray(path.values)
    idx = np.flatnonzero(v >= 1.0)
    if idx.size == 0:
        raise ValueError("path never reaches 1")
    n = int(idx[0])
    lo, hi = y_range
    nb = max(1, int(round((hi - lo) / (2 * eps))))
    edges = np.linspace(lo, hi, nb + 1)
    occ, _ = np.histogram(v[:n], bins=edges)
    occ = occ * path.h
    total = n * path.h
    return OccupationProfile(edges, occ, total - occ.sum(), total)


@numba.njit(cache=True)
def _besq_profiles(gen, a_switch, da, n, trials):
    """Squared Bessel paths on the grid a = j*da, started at 0, of dimension
    2 up to a_switch and dimension 0 afterwards (exact transitions)."""
    out = np.zeros((trials, n + 1))
    for i in range(trials):
        x = 0.0
        for j in range(1, n + 1):
            dim = 2.0 if j * da <= a_switch + 1e-12 else 0.0
            k = gen.poisson(x / (2 * da)) if x > 0 else 0
            df = dim + 2 * k
            x = da * 2.0 * gen.gamma(df / 2.0, 1.0) if df > 0 else 0.0
            out[i, j] = x
    return out


@numba.njit(cache=True)
def _fine_infima(gen, start, h, lo, hi, nbands, max_steps, trials):
    sd = math.sqrt(h)
    width = (hi - lo) / nbands
    occ = np.empty(nbands)
    out = np.empty(trials)
    censored = 0
    for i in range(trials):
        occ[:] = 0.0
        x = start
        n = 0
        while x < 1.0 and n < max_steps:
            if lo <= x < hi:
                occ[int((x - lo) / width)] += h
            x += sd * gen.standard_normal()
            n += 1
        if x < 1.0:
            censored += 1
            out[i] = np.nan
        else:
            out[i] = occ.min() / width
    return out, censored


@dataclass
class LocalTimeCurve:
    deltas: np.ndarray
    p_hat: np.ndarray
    ci_high: np.ndarray
    trials: int
    delta_star: float | None
    censored: int = 0


def local_time_infimum_curve(r, deltas, trials: int, rng, start: str = "zero",
                             method: str = "ray_knight", da: float = 1e-3,
                             h: float = 1e-4, eps: float = 0.02, target: float = 1 / 6,
                             max_time: float = 200.0) -> LocalTimeCurve:
    """P[inf over x in [-3r, 1-r] of L_x(tau_1) < delta] for each delta.

    ``start="zero"`` runs Brownian motion from 0; ``start="low"`` from -3r.
    ``method="ray_knight"`` samples the local-time profile exactly as a squared
    Bessel process on a grid of spacing ``da``; ``method="fine"`` uses
    occupations along a fine path. Both average the profile over bands of
    width ``2*eps``; ``eps=None`` gives the pointwise infimum on the grid
    (Bessel method only).
    """
    r = float(Fraction(r).limit_denominator(10 ** 6))
    deltas = np.asarray(deltas, dtype=float)
    gen = as_stream(rng).generator()
    x0 = 0.0 if start == "zero" else -3 * r
    censored = 0
    lo, hi = -3 * r, 1 - r
    nb = max(1, int(round((hi - lo) / (2 * eps)))) if eps else 0
    if method == "ray_knight":
        # profile at level x is the Bessel path at a = 1 - x
        n = int(round((1.0 - lo) / da))
        prof = _besq_profiles(gen, 1.0 - x0, da, n, int(trials))
        a = da * np.arange(n + 1)
        if nb:
            edges = 1.0 - np.linspace(hi, lo, nb + 1)
            means = []
            for e0, e1 in zip(edges[:-1], edges[1:]):
                sel = (a >= e0 - 1e-12) & (a <= e1 + 1e-12)
                means.append(np.trapezoid(prof[:, sel], a[sel], axis=1) / (a[sel][-1] - a[sel][0]))
            inf = np.min(means, axis=0)
        else:
            inf = prof[:, a >= r - 1e-12].min(axis=1)
    elif method == "fine":
        if not nb:
            raise ValueError("fine-path local times need a band width eps > 0")
        inf, censored = _fine_infima(gen, x0, h, lo, hi, nb, int(max_time / h), int(trials))
        inf = inf[~np.isnan(inf)]
    else:
        raise ValueError(f"unknown method {method!r}")
    n = len(inf)
    k = np.array([np.count_nonzero(inf < d) for d in deltas])
    p = k / n
    hi = np.array([wilson_interval(int(kk), n)[1] for kk in k])
    ok = deltas[hi < target]
    return LocalTimeCurve(deltas, p, hi, n, float(ok.max()) if ok.size else None, censored)


# ---------------------------------------------------------------- occupation vs upcrossings

def psi(lam: float) -> float:
    return float(np.log(exit_time_mgf(lam)))


@dataclass
class OccupationEventReport:
    per_interval_failure: np.ndarray
    union_estimate: float
    union_se: float
    bound: float
    per_interval_bound: np.ndarray
    exponent: float
    regime_ok: bool
    J_within_4cK: bool


def upcrossings_vs_occupation_check(params: GoodnessParams, delta: float, lam: float,
                                    trials: int, rng) -> OccupationEventReport:
    """How often an interval I_m collects delta/K of occupation before its
    ceil(cK)-th upcrossing completes.

    Occupation before that upcrossing is a sum of i.i.d. exit times: 2C-1 of
    them for intervals at or above the start, 2C below it. Each interval is
    sampled from its exact marginal law; the union bound only needs marginals.
    """
    if delta <= 0 or lam <= 0:
        raise ValueError("delta and lambda must be positive")
    K, C, c = params.K, params.C, params.c
    ps = psi(lam)
    exponent = -K * (delta * lam - 4 * c * ps)
    stream = as_stream(rng)
    fails, pbound = [], []
    for j, m in enumerate(params.heights):
        J = 2 * C - 1 if m >= 0 else 2 * C
        s = sample_exit_times(stream.substream("occupation", j), trials * J).reshape(trials, J)
        fails.append(np.mean(s.sum(axis=1) > delta * K))
        pbound.append(min(1.0, math.exp(J * ps - lam * delta * K)))
    fails = np.array(fails)
    union = float(fails.sum())
    se = math.sqrt(float(np.sum(fails * (1 - fails))) / trials)
    bound = params.n_heights * math.exp(exponent)
    return OccupationEventReport(fails, union, se, bound, np.array(pbound), exponent,
                                 4 * c * ps < delta * lam, 2 * C + 1 <= 4 * c * K)
