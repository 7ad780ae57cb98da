"""Self-check suites run by ``brownlab verify``.

``trivial`` holds exact or deterministic identities, ``quick`` adds small
Monte Carlo checks, ``all`` adds the heavier pipelines at reduced scale.
Every stochastic check draws from its own named substream of the seed, so the
emitted table is a pure function of the seed.
"""
from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import boxes, field, io, levelset, paths, percolation
from .rng import RngStream

HEADER = ["suite", "check", "value", "threshold", "passed"]


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


def _le(name, value, threshold) -> Check:
    return Check(name, float(value), float(threshold), bool(value <= threshold))


def _ge(name, value, threshold) -> Check:
    return Check(name, float(value), float(threshold), bool(value >= threshold))


# ---------------------------------------------------------------- trivial

def trivial_checks(stream: RngStream) -> list[Check]:
    out = []
    law = paths.enumerate_walk_law(2)
    err = max(abs(float(law[x]) - paths.p_up(x, 2)) for x in law)
    out.append(_le("walk_law_enumeration_K2", err, 1e-12))

    w = paths.sample_conditioned_walk(5, stream.substream("walk"))
    lv = w.levels
    out.append(Check("walk_ends_at_K", float(lv[-1]), 5.0, bool(lv[-1] == 5 and lv.min() > -5)))

    out.append(_le("exit_mgf_at_zero", abs(paths.exit_time_mgf(0.0) - 1.0), 1e-15))
    t = np.array([0.5 - 1e-9, 0.5 + 1e-9])
    out.append(_le("exit_cdf_branch_continuity", abs(np.diff(paths.exit_time_cdf(t))[0]), 1e-8))

    out.append(_le("bridge_target_at_zero", abs(math.exp(-2 * 0.0 ** 2 / 1.0) - 1.0), 0.0))
    out.append(_le("bridge_target_half", abs(math.exp(-2 * 0.25) - 0.6065306597126334), 1e-15))

    worst = max(percolation.binomial_bound_check(cK, math.ceil(cK / 2), t).exact
                - percolation.binomial_bound_check(cK, math.ceil(cK / 2), t).bound
                for cK in range(4, 41) for t in np.linspace(0.75, 1.0, 52)[1:-1])
    out.append(_le("chernoff_grid_worst_gap", worst, 0.0))

    p = paths.FinePath(0.25, np.array([0.0, 0.3, -0.2, 0.1, 0.4]))
    ls = levelset.extract_level_set(p, 1.0)
    out.append(_le("level_set_above_max_empty", len(ls.clusters), 0))
    ls0 = levelset.extract_level_set(p, 0.0)
    out.append(_le("level_set_starts_at_zero", int(ls0.clusters[0, 0]), 0))
    cov = levelset.build_cover(ls, 8)
    out.append(Check("empty_cover_feasible", float(cov.m), 0.0, bool(cov.feasible and cov.m == 0)))

    spike = np.full(1025, 1.0)
    spike[500:503] = [-1.0, 1.0, -1.0]
    ls1 = levelset.extract_level_set(paths.FinePath(1 / 1024, spike), 0.0)
    cov1 = levelset.build_cover(ls1, 2)
    out.append(Check("narrow_cluster_one_interval", float(cov1.m), 1.0,
                     bool(isinstance(cov1, levelset.CoverFamily) and cov1.m == 1 and cov1.feasible)))

    far = paths.FinePath(1 / 64, np.zeros(65))
    z, wpt = (0.2, 3.0), (0.7, 2.0)
    g = levelset.route_detour(far, z, wpt, 0.05)
    m = levelset.validate_detour(g, far)
    out.append(_le("l_route_length_excess", abs(g.length - 1.5), 1e-12))
    out.append(_le("l_route_intersections", m["intersections"], 0))

    tree = paths.build_crossing_tree(5, 3, stream.substream("tree"), durations="sampled")
    with tempfile.TemporaryDirectory() as tmp:
        f = Path(tmp) / "t.tree"
        io.save_tree(tree, f)
        same = io.trees_equal(tree, io.load_tree(f))
        data = bytearray(f.read_bytes())
        data[io._HEADER.size + 10] ^= 0x03          # child count of the root
        f.write_bytes(bytes(data))
        try:
            io.load_tree(f)
            rejected = False
        except io.FormatError:
            rejected = True
    out.append(Check("tree_round_trip", float(same), 1.0, same))
    out.append(Check("corrupt_tree_rejected", float(rejected), 1.0, rejected))
    return out


# ---------------------------------------------------------------- quick

def quick_checks(stream: RngStream) -> list[Check]:
    out = []
    ruin = percolation.gamblers_ruin_check(Fraction(1, 5), 20_000, stream.substream("ruin"))
    out.append(_le("gamblers_ruin_z", abs(ruin.z), 3.0))

    draws = paths.sample_exit_times(stream.substream("mgf"), 100_000)
    rel = abs(np.mean(np.exp(0.1 * draws)) / paths.exit_time_mgf(0.1) - 1)
    out.append(_le("exit_mgf_rel_error", rel, 0.01))

    rep = levelset.bridge_max_check(1.0, 1024, 10_000, stream.substream("bridge"))
    out.append(_le("bridge_max_sup_error", rep.sup_error, 0.03))
    kc = levelset.excursion_range_identity_check(1.0, 512, 2000, stream.substream("kc"))
    out.append(_ge("excursion_range_ks_pvalue", kc.pvalue, 0.01))
    tb = levelset.excursion_tail_bound_check(1.0, levelset.geometric_lengths(1.0, 20), 10_000,
                                             stream.substream("tail"))
    out.append(_le("excursion_tail_violations", tb.violations, 0))

    st = levelset.stitching_demo(0.3, 5, 20_000, stream.substream("stitch"))
    out.append(_le("stitch_first_mean_error", abs(st.first_mean - 0.09), 0.005))

    path = paths.sample_fine_path(1.0, 2.0 ** -14, stream.substream("path"))
    viol = 0
    g = stream.substream("queries").generator()
    lo, hi = float(path.values.min()), float(path.values.max())
    for _ in range(20):
        z = (g.uniform(0, 1), g.uniform(lo, hi))
        w = (g.uniform(0, 1), g.uniform(lo, hi))
        try:
            d = levelset.route_detour(path, z, w, 0.05)
        except levelset.RouteInfeasible:
            continue
        m = levelset.validate_detour(d, path)
        viol += (d.length > math.sqrt(2) * math.dist(z, w) + 0.05
                 or m["intersections"] > m["hop_bound"])
    out.append(_le("router_violations", viol, 0))
    return out


# ---------------------------------------------------------------- all

def heavy_checks(stream: RngStream) -> list[Check]:
    out = []
    params = boxes.GoodnessParams(5, Fraction(1, 5), 0.8)
    dist = percolation.estimate_child_distribution(params, 20_000, stream.substream("children"))
    # a walk from 0 to K in K^2 steps on average makes (K^2 + K)/2 up-steps
    mean_up = float(dist.counts.sum(axis=1).mean())
    out.append(_le("mean_up_steps_rel_error", abs(mean_up / 15.0 - 1), 0.03))
    curve = percolation.iterate_alpha(dist, params, n_max=6)
    out.append(_le("alpha_residual", curve.residual, 1e-12))

    weak = params.with_c(0.4)
    fam = boxes.sample_good_family(weak, 3, stream.substream("family"))
    fam.validate()
    fobj = field.ExceptionalField(fam)
    ys = np.linspace(0.26, 0.74, 101)
    jumps = [float(np.max(np.abs(fobj.line_stats(ys, n)[:, 0] - fobj.bump(ys))))
             for n in range(4)]
    out.append(_le("mass_conservation", max(jumps), 1e-12))
    rep = field.sobolev_report(fobj, 1.0, 2, res=8)
    out.append(_le("sobolev_layers_decrease", float(np.max(np.diff(rep.values))), 0.0))

    decays = []
    for i in range(3):
        p = paths.sample_fine_path(1.0, 2.0 ** -16, stream.substream("cover", i))
        decays.append(levelset.cover_decay(p, 0.2, range(2, 9)))
    fit = levelset.pooled_decay(decays)[0]
    # decay exponent at most -1/8 + 0.1; a NaN fit (too few feasible k) fails
    out.append(Check("cover_decay_slope", fit, -0.025, bool(fit <= -0.025)))
    return out


SUITES = {
    "trivial": (trivial_checks,),
    "quick": (trivial_checks, quick_checks),
    "all": (trivial_checks, quick_checks, heavy_checks),
}


def run_suite(suite: str, seed: int) -> list[tuple]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    stream = RngStream(seed)
    rows = []
    for fn in SUITES[suite]:
        part = fn.__name__.replace("_checks", "")
        for c in fn(stream.substream(part)):
            rows.append((part, c.name, c.value, c.threshold, c.passed))
    return rows
