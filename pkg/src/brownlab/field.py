"""The exceptional function built on a nested box family.

On each horizontal line y the scale-n function u_n is the integral in x of
a density that puts mass alpha_n(box, y) on every scale-n box crossing the
line, spread uniformly over the box's width. alpha starts as g(y) on the
root box and is split between children with the partition weights phi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import quad

from .boxes import FlatFamily, GoodnessParams, SelectedFamily

RHO_SLOPE = 1.875  # max of the smoothstep derivative, at t = 1/2


@numba.njit(cache=True, inline="always")
def _rho(t):
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@numba.njit(cache=True, inline="always")
def _drho(t):
    return 30.0 * t * t * (1.0 - t) * (1.0 - t)


@numba.njit(cache=True)
def _g(y, a, c, b):
    if y <= a or y >= b:
        return 0.0, 0.0
    if y <= c:
        t = (y - a) / (c - a)
        return _rho(t), _drho(t) / (c - a)
    t = (b - y) / (b - c)
    return _rho(t), -_drho(t) / (b - c)


@numba.njit(cache=True)
def _phi(x, r):
    if x <= -3.0 * r:
        return 0.0, 0.0
    if x < -2.0 * r:
        t = (x + 3.0 * r) / r
        return _rho(t), _drho(t) / r
    # right edge, tested through x - 1 so the overlap matches the left edge
    # of the neighbouring window exactly
    xm = x - 1.0
    if xm <= -3.0 * r:
        return 1.0, 0.0
    if xm >= -2.0 * r:
        return 0.0, 0.0
    t = (xm + 3.0 * r) / r
    return 1.0 - _rho(t), -_drho(t) / r


@dataclass(frozen=True)
class BumpProfile:
    """C^2 bump rising on [lo, peak] and falling on [peak, hi], peak value 1."""

    lo: float = 0.25
    peak: float = 0.5
    hi: float = 0.75

    def __post_init__(self):
        if not (0.25 <= self.lo < self.peak < self.hi <= 0.75):
            raise ValueError("bump must satisfy 1/4 <= lo < peak < hi <= 3/4")

    @classmethod
    def for_params(cls, params: GoodnessParams) -> "BumpProfile":
        # children of the root cover lines up to 1 - r - 3r/K; keep g inside
        r = float(params.r)
        return cls(0.25, 0.5, min(0.75, 1 - r - 3 * r / params.K))

    def __call__(self, y):
        return np.vectorize(lambda v: _g(v, self.lo, self.peak, self.hi)[0])(y)

    def derivative(self, y):
        return np.vectorize(lambda v: _g(v, self.lo, self.peak, self.hi)[1])(y)

    @property
    def slope_bound(self) -> float:
        return RHO_SLOPE / min(self.peak - self.lo, self.hi - self.peak)

    def derivative_power_integral(self, p: float) -> float:
        f = lambda v: abs(_g(v, self.lo, self.peak, self.hi)[1]) ** p
        return quad(f, self.lo, self.peak)[0] + quad(f, self.peak, self.hi)[0]


@dataclass(frozen=True)
class PartitionProfile:
    r: float

    def __call__(self, x):
        return np.vectorize(lambda v: _phi(v, self.r)[0])(x)

    def derivative(self, x):
        return np.vectorize(lambda v: _phi(v, self.r)[1])(x)

    @property
    def slope_bound(self) -> float:
        return RHO_SLOPE / self.r


@dataclass
class FieldParams:
    goodness: GoodnessParams
    p: float = 1.0
    margin: float = 0.5
    quadrature_res: int = 8

    @property
    def divergent(self) -> bool:
        """True outside the convergent regime K > s^-p."""
        return self.goodness.K <= self.goodness.s ** -self.p


# ---------------------------------------------------------------- compiled line scans

@numba.njit(cache=True)
def _scan(y, n, K, r, S, ga, gc, gb, x0, hm, cs, ce, out_idx, out_a, out_da):
    """Scale-n boxes whose clipped band contains the line y, in time order,
    with their alpha and d(alpha)/dy. Returns the number written."""
    z0 = y
    if z0 < -3.0 * r or z0 > 1.0:
        return 0
    box = np.empty(n + 1, np.int64)
    cur = np.empty(n + 1, np.int64)
    zeta = np.empty(n + 1)
    A = np.empty(n + 1)
    dA = np.empty(n + 1)
    kp = 1.0
    kpow = np.empty(n + 1)
    for k in range(n + 1):
        kpow[k] = kp
        kp *= K
    g, dg = _g(y, ga, gc, gb)
    box[0] = 0
    cur[0] = cs[0]
    zeta[0] = z0
    A[0] = g
    dA[0] = dg
    w = 0
    d = 0
    while d >= 0:
        if d == n:
            out_idx[w] = box[d]
            out_a[w] = A[d]
            out_da[w] = dA[d]
            w += 1
            d -= 1
            continue
        if cur[d] >= ce[box[d]]:
            d -= 1
            continue
        c = cur[d]
        cur[d] += 1
        z = K * zeta[d] - hm[c]
        if z < -3.0 * r or z > 1.0:
            continue
        ph, dph = _phi(z, r)
        k = d + 1
        zeta[k] = z
        A[k] = A[d] * ph / S
        dA[k] = (dA[d] * ph + A[d] * kpow[k] * dph) / S
        box[k] = c
        cur[k] = cs[c]
        d = k
    return w


@numba.njit(cache=True)
def _line_stats(ys, n, K, r, S, ga, gc, gb, x0, x1, hm, cs, ce, buf_i, buf_a, buf_d):
    """Per line: mass, sup |d_y u_n|, sup |d_y alpha_n|, covered length, box count."""
    m = ys.shape[0]
    out = np.zeros((m, 5))
    for i in range(m):
        cnt = _scan(ys[i], n, K, r, S, ga, gc, gb, x0, hm, cs, ce, buf_i, buf_a, buf_d)
        mass = 0.0
        pref = 0.0
        vmax = 0.0
        emax = 0.0
        length = 0.0
        for j in range(cnt):
            b = buf_i[j]
            mass += buf_a[j]
            pref += buf_d[j]
            if abs(pref) > vmax:
                vmax = abs(pref)
            if abs(buf_d[j]) > emax:
                emax = abs(buf_d[j])
            length += x1[b] - x0[b]
        out[i, 0] = mass
        out[i, 1] = vmax
        out[i, 2] = emax
        out[i, 3] = length
        out[i, 4] = cnt
    return out


@numba.njit(cache=True)
def _layer_lines(ys, n, p, K, r, S, ga, gc, gb, x0, x1, hm, cs, ce):
    """Per line y: integral in x of |d_y u_{n+1}|^p over scale-n boxes minus
    their scale-(n+1) children, plus the sup of |d_y u_{n+1}| there."""
    m = ys.shape[0]
    out = np.zeros((m, 2))
    top = n + 1
    box = np.empty(top + 1, np.int64)
    cur = np.empty(top + 1, np.int64)
    zeta = np.empty(top + 1)
    A = np.empty(top + 1)
    dA = np.empty(top + 1)
    kpow = np.empty(top + 1)
    kp = 1.0
    for k in range(top + 1):
        kpow[k] = kp
        kp *= K
    for i in range(m):
        y = ys[i]
        if y < -3.0 * r or y > 1.0:
            continue
        g, dg = _g(y, ga, gc, gb)
        box[0] = 0
        cur[0] = cs[0]
        zeta[0] = y
        A[0] = g
        dA[0] = dg
        pref = 0.0
        acc = 0.0
        sup = 0.0
        xcur = x0[0]
        if n == 0:
            xcur = x0[0]
        d = 0
        while d >= 0:
            if d == top:
                c = box[d]
                acc += (x0[c] - xcur) * abs(pref) ** p
                if x0[c] > xcur and abs(pref) > sup:
                    sup = abs(pref)
                pref += dA[d]
                xcur = x1[c]
                d -= 1
                continue
            if cur[d] >= ce[box[d]]:
                if d == n:
                    b = box[d]
                    acc += (x1[b] - xcur) * abs(pref) ** p
                    if x1[b] > xcur and abs(pref) > sup:
                        sup = abs(pref)
                d -= 1
                continue
            c = cur[d]
            cur[d] += 1
            z = K * zeta[d] - hm[c]
            if z < -3.0 * r or z > 1.0:
                continue
            ph, dph = _phi(z, r)
            k = d + 1
            zeta[k] = z
            A[k] = A[d] * ph / S
            dA[k] = (dA[d] * ph + A[d] * kpow[k] * dph) / S
            box[k] = c
            cur[k] = cs[c]
            if k == n:
                xcur = x0[c]
            d = k
        out[i, 0] = acc
        out[i, 1] = sup
    return out


# ---------------------------------------------------------------- evaluation

@dataclass
class AlphaEvaluation:
    chain: list[int]
    alpha: float
    dalpha: float
    width: float

    @property
    def density(self) -> float:
        return self.alpha / self.width if self.chain else 0.0


@dataclass
class LineProfile:
    """Scale-n boxes crossing one line, in time order."""

    y: float
    n: int
    index: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    alpha: np.ndarray
    dalpha: np.ndarray

    def integrate(self, x, weights) -> np.ndarray:
        """Integral from -inf to x of the density with per-box masses ``weights``."""
        x = np.asarray(x, dtype=float)
        if self.index.size == 0:
            return np.zeros_like(x)
        cum = np.concatenate([[0.0], np.cumsum(weights)])
        i = np.searchsorted(self.x0, x, side="right") - 1
        inside = i >= 0
        ii = np.where(inside, i, 0)
        frac = np.clip((x - self.x0[ii]) / (self.x1[ii] - self.x0[ii]), 0.0, 1.0)
        return np.where(inside, cum[ii] + weights[ii] * frac, 0.0)


class ExceptionalField:
    """Evaluator for u_n and its y-derivative on a fixed family."""

    def __init__(self, family: SelectedFamily, bump: BumpProfile | None = None):
        self.family = family
        self.params = family.params
        self.bump = bump or BumpProfile.for_params(family.params)
        self.phi = PartitionProfile(float(family.params.r))
        self.flat: FlatFamily = family.flat()
        size = max(family.count(n) for n in range(family.depth + 1))
        self._buf = (np.empty(size, np.int64), np.empty(size), np.empty(size))

    @property
    def depth(self) -> int:
        return self.family.depth

    @property
    def total_width(self) -> float:
        return float(self.family.x1[0][0] - self.family.x0[0][0])

    def _kargs(self):
        p, f, b = self.params, self.flat, self.bump
        return (float(p.K), float(p.r), float(p.S), b.lo, b.peak, b.hi)

    def _check_n(self, n: int):
        if not 0 <= n <= self.depth:
            raise ValueError(f"scale {n} outside family depth {self.depth}")

    def line(self, y: float, n: int) -> LineProfile:
        self._check_n(n)
        f = self.flat
        bi, ba, bd = self._buf
        cnt = _scan(float(y), n, *self._kargs(), f.x0, f.height, f.cstart, f.cend, bi, ba, bd)
        idx = bi[:cnt].copy()
        return LineProfile(float(y), n, idx, f.x0[idx], f.x1[idx], ba[:cnt].copy(), bd[:cnt].copy())

    def line_stats(self, ys, n: int) -> np.ndarray:
        """Columns: mass, sup |d_y u_n|, sup |d_y alpha_n|, covered length, box count."""
        self._check_n(n)
        f = self.flat
        bi, ba, bd = self._buf
        return _line_stats(np.ascontiguousarray(ys, dtype=float), n, *self._kargs(),
                           f.x0, f.x1, f.height, f.cstart, f.cend, bi, ba, bd)

    def _per_line(self, n, x, y, which):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.broadcast_to(np.atleast_1d(np.asarray(y, dtype=float)), x.shape)
        out = np.empty(x.shape)
        for yv in np.unique(y):
            sel = y == yv
            lp = self.line(yv, n)
            out[sel] = lp.integrate(x[sel], lp.alpha if which == "u" else lp.dalpha)
        return out

    def u(self, n: int, x, y) -> np.ndarray:
        return self._per_line(n, x, y, "u")

    def grad_y(self, n: int, x, y) -> np.ndarray:
        return self._per_line(n, x, y, "du")

    def grad_x(self, n: int, x, y) -> np.ndarray:
        """d_x u_n = alpha / width inside a crossing box, else 0."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.broadcast_to(np.atleast_1d(np.asarray(y, dtype=float)), x.shape)
        out = np.zeros(x.shape)
        for yv in np.unique(y):
            sel = np.flatnonzero(y == yv)
            lp = self.line(yv, n)
            if lp.index.size == 0:
                continue
            i = np.searchsorted(lp.x0, x[sel], side="right") - 1
            ok = (i >= 0) & (x[sel] < lp.x1[np.maximum(i, 0)])
            ii = np.maximum(i, 0)
            out[sel] = np.where(ok, lp.alpha[ii] / (lp.x1[ii] - lp.x0[ii]), 0.0)
        return out

    def in_gamma(self, n: int, x, y) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.broadcast_to(np.atleast_1d(np.asarray(y, dtype=float)), x.shape)
        out = np.zeros(x.shape, bool)
        for yv in np.unique(y):
            sel = np.flatnonzero(y == yv)
            lp = self.line(yv, n)
            if lp.index.size:
                i = np.maximum(np.searchsorted(lp.x0, x[sel], side="right") - 1, 0)
                out[sel] = (x[sel] >= lp.x0[i]) & (x[sel] <= lp.x1[i])
        return out

    def alpha_at(self, n: int, x: float, y: float) -> AlphaEvaluation:
        lp = self.line(y, n)
        if lp.index.size == 0:
            return AlphaEvaluation([], 0.0, 0.0, 0.0)
        # rightmost box owns a shared edge
        i = int(np.searchsorted(lp.x0, x, side="right")) - 1
        if i < 0 or x > lp.x1[i]:
            return AlphaEvaluation([], 0.0, 0.0, 0.0)
        chain = [int(lp.index[i])]
        off = self.flat.offsets
        for k in range(n, 0, -1):
            local = chain[0] - off[k]
            chain.insert(0, int(self.family.parent[k][local] + off[k - 1]))
        return AlphaEvaluation(chain, float(lp.alpha[i]), float(lp.dalpha[i]),
                               float(lp.x1[i] - lp.x0[i]))

    def u_limit(self, x: float, y: float, tol: float) -> tuple[float, int, bool]:
        """u within ``tol``: (value, scale used, exact flag)."""
        S = self.params.S
        floor = S ** -self.depth / (1 - 1 / S)
        if tol <= floor:
            raise ValueError(f"tolerance {tol} not reachable at depth {self.depth} "
                             f"(tail bound {floor:.3g})")
        for n in range(self.depth + 1):
            if not self.in_gamma(n, x, y)[0]:
                return float(self.u(n, x, y)[0]), n, True
            if S ** -n / (1 - 1 / S) < tol:
                return float(self.u(n, x, y)[0]), n, False
        return float(self.u(self.depth, x, y)[0]), self.depth, False

    # -------------------------------------------------------- layer integrals

    def y_grid(self, n: int, res: int) -> np.ndarray:
        r = float(self.params.r)
        lo, hi = -3 * r, 1.0
        step = float(self.params.K) ** -(n + 1) / res
        m = int(math.ceil((hi - lo) / step))
        return lo + (np.arange(m) + 0.5) * (hi - lo) / m

    def _layer(self, n: int, p: float, ys: np.ndarray) -> np.ndarray:
        f = self.flat
        return _layer_lines(ys, n, float(p), *self._kargs(), f.x0, f.x1, f.height,
                            f.cstart, f.cend)

    def sobolev_layer(self, n: int, p: float = 1.0, res: int = 8) -> "LayerEstimate":
        """Integral of |grad u|^p over Gamma_n minus Gamma_{n+1}.

        Exact in x (the integrand is piecewise constant there), midpoint rule
        in y with ``res`` lines per scale-(n+1) box height; the error estimate
        compares against half that resolution.
        """
        if n + 1 > self.depth:
            raise ValueError(f"layer {n} needs family depth {n + 1}")
        if res < 2:
            raise ValueError("quadrature resolution must be at least 2")
        fine = self.y_grid(n, res)
        coarse = self.y_grid(n, res // 2)
        lf = self._layer(n, p, fine)
        lc = self._layer(n, p, coarse)
        span = 1 + 3 * float(self.params.r)
        vf = float(lf[:, 0].sum() * span / len(fine))
        vc = float(lc[:, 0].sum() * span / len(coarse))
        return LayerEstimate(n, p, vf, abs(vf - vc), float(lf[:, 1].max(initial=0.0)),
                             len(fine))

    def outside_term(self, p: float = 1.0, margin: float = 0.5) -> float:
        """Integral of |grad u|^p over the square minus the root band: u equals
        g(y) to the right of the root box and 0 elsewhere there."""
        r = float(self.params.r)
        side = max(self.total_width, 1 + 3 * r) + 2 * margin
        right = self.family.x0[0][0] + 0.5 * (self.total_width + side)
        return (right - float(self.family.x1[0][0])) * self.bump.derivative_power_integral(p)


@dataclass
class LayerEstimate:
    n: int
    p: float
    value: float
    error: float
    sup_grad: float
    lines: int


# ---------------------------------------------------------------- reports

def fit_log_slope(values) -> float:
    v = np.asarray(values, dtype=float)
    n = np.arange(len(v))
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(n[ok], np.log(v[ok]), 1)[0])


@dataclass
class SobolevReport:
    p: float
    layers: list[LayerEstimate]
    outside: float
    slope: float
    predicted: float
    divergent: bool

    @property
    def values(self) -> np.ndarray:
        return np.array([l.value for l in self.layers])


def sobolev_report(fieldobj: ExceptionalField, p: float, n_max: int, res: int = 8) -> SobolevReport:
    layers = [fieldobj.sobolev_layer(n, p, res) for n in range(n_max + 1)]
    g = fieldobj.params
    pred = math.log(g.s ** -p / g.K)
    return SobolevReport(p, layers, fieldobj.outside_term(p), fit_log_slope([l.value for l in layers]),
                         pred, g.K <= g.s ** -p)


@dataclass
class GrowthReport:
    values: np.ndarray
    constant: float
    slope: float
    residuals: np.ndarray


def probe_lines(fieldobj: ExceptionalField, count: int = 4001) -> np.ndarray:
    b = fieldobj.bump
    return np.linspace(b.lo, b.hi, count)


def en_bound_check(fieldobj: ExceptionalField, n_max: int, ys=None) -> GrowthReport:
    """e_n = sup |d_y alpha_n| over probe lines; fits e_n <= C s^-n."""
    ys = probe_lines(fieldobj) if ys is None else ys
    s = fieldobj.params.s
    e = np.array([fieldobj.line_stats(ys, n)[:, 2].max() for n in range(n_max + 1)])
    C = float(np.max(e * s ** np.arange(n_max + 1)))
    return GrowthReport(e, C, fit_log_slope(e), e * s ** np.arange(n_max + 1))


def vn_bound_check(fieldobj: ExceptionalField, n_max: int, ys=None) -> GrowthReport:
    """v_n = sup |d_y u_n| over probe lines; one constant C' with
    v_{n+1} - v_n <= C' s^-(n+1)."""
    ys = probe_lines(fieldobj) if ys is None else ys
    s = fieldobj.params.s
    v = np.array([fieldobj.line_stats(ys, n)[:, 1].max() for n in range(n_max + 1)])
    steps = np.diff(v) * s ** np.arange(1, n_max + 1)
    C = float(max(steps.max(initial=0.0), 0.0))
    return GrowthReport(v, C, fit_log_slope(v), steps)


@dataclass
class AclWitness:
    y: np.ndarray
    jump: np.ndarray
    g: np.ndarray
    max_offfamily_dx: np.ndarray
    offfamily_probes: np.ndarray
    measure: np.ndarray  # lines x scales: length of the line inside Gamma_n
    count: np.ndarray


def acl_witness(fieldobj: ExceptionalField, y_probes, x_probes: int = 2001) -> AclWitness:
    ys = np.asarray(y_probes, dtype=float)
    N = fieldobj.depth
    fam = fieldobj.family
    xs = np.linspace(fam.x0[0][0], fam.x1[0][0], x_probes)
    right = fam.x1[0][0] + 1.0
    left = fam.x0[0][0] - 1.0
    jump = fieldobj.u(N, np.full(len(ys), right), ys) - fieldobj.u(N, np.full(len(ys), left), ys)
    dxmax, nprobe = [], []
    for y in ys:
        inside = fieldobj.in_gamma(N, xs, np.full(len(xs), y))
        off = xs[~inside]
        dx = fieldobj.grad_x(N, off, np.full(len(off), y))
        dxmax.append(float(np.abs(dx).max(initial=0.0)))
        nprobe.append(len(off))
    meas = np.stack([fieldobj.line_stats(ys, n)[:, 3] for n in range(N + 1)], axis=1)
    cnt = np.stack([fieldobj.line_stats(ys, n)[:, 4] for n in range(N + 1)], axis=1)
    return AclWitness(ys, jump, fieldobj.bump(ys), np.array(dxmax), np.array(nprobe), meas, cnt)
