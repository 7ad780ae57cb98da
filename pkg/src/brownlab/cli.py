"""Command-line entry point: ``brownlab <command> [options]``.

Exit status is 0 on success, 1 when a check or file validation fails and 2
on usage errors. Options can also come from a ``key = value`` file given by
``--config``; flags on the command line win.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, boxes, field, io, levelset, paths, percolation, report, verify
from .rng import RngStream


class CheckFailed(RuntimeError):
    """A computed contract did not hold; maps to exit status 1."""

    def __init__(self, message: str, outputs=()):
        super().__init__(message)
        self.outputs = list(outputs)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def _fraction(s: str) -> Fraction:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a fraction: {s!r}") from None


def _floats(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {s!r}") from None


def read_config(path) -> dict:
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        cfg[k.replace("-", "_")] = v
    return cfg


def _stream(args) -> RngStream:
    if args.seed is None:
        raise UsageError(f"{args.command} needs --seed")
    return RngStream(int(args.seed))


def _params(args) -> boxes.GoodnessParams:
    return boxes.GoodnessParams(args.K, args.r, args.c)


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------- commands

def cmd_sample_tree(args):
    tree = paths.build_crossing_tree(args.K, args.depth, _stream(args), durations=args.durations)
    out = Path(args.out)
    io.save_tree(tree, out)
    return [out], f"{tree.node_count} nodes"


def cmd_classify(args):
    tree = io.load_tree(args.tree)
    params = boxes.GoodnessParams(tree.K, args.r, args.c)
    labels = boxes.classify_Gn(tree, params, args.n_max)
    rows = [(d, n, labels.fraction_at_least(d, n))
            for d in range(tree.max_depth + 1) for n in range(1, args.n_max + 1)
            if d + n <= tree.max_depth]
    out = report.write_csv(_out_dir(args) / "labels.csv", ["depth", "n", "fraction"], rows)
    return [out], f"root label {int(labels.labels[0][0])}"


def _boxes_rows(fam: boxes.SelectedFamily):
    rows = []
    for layer in boxes.gamma_layers(fam):
        for i in range(len(layer.x0)):
            rows.append((layer.scale, i, layer.x0[i], layer.x1[i], layer.y0[i], layer.y1[i]))
    return rows


def cmd_select_family(args):
    fam = boxes.sample_good_family(_params(args), args.depth, _stream(args),
                                   durations=args.durations)
    fam.validate()
    out = Path(args.out)
    io.save_family(fam, out)
    return [out], f"{sum(fam.count(n) for n in range(fam.depth + 1))} boxes"


def cmd_estimate_q(args):
    params = _params(args)
    dist = percolation.estimate_child_distribution(params, args.trials, _stream(args))
    rows = []
    for band in ("admissible", "traversed"):
        q = percolation.estimate_q(params, args.trials, None, band=band, dist=dist)
        rows.append((band, q.q, q.ci[0], q.ci[1], q.successes, q.trials))
    out = report.write_csv(_out_dir(args) / "q.csv",
                           ["band", "q", "ci_low", "ci_high", "successes", "trials"], rows)
    return [out], f"q = {rows[0][1]:.4g}"


def cmd_fixed_point(args):
    params = _params(args)
    dist = percolation.estimate_child_distribution(params, args.trials, _stream(args))
    curve = percolation.iterate_alpha(dist, params, n_max=args.n_max)
    rows = [(n + 1, a) for n, a in enumerate(curve.alphas)]
    d = _out_dir(args)
    a = report.write_csv(d / "alpha.csv", ["n", "alpha"], rows)
    b = report.write_csv(d / "alpha_limit.csv",
                         ["limit", "residual", "iterations", "regime_holds", "regime_min"],
                         [(curve.limit, curve.residual, curve.iterations, curve.regime_holds,
                           curve.regime_min)])
    return [a, b], f"alpha limit {curve.limit:.4g}"


def cmd_build_field(args):
    fam_path = Path(args.family).resolve()
    fam = io.load_family(fam_path)
    bump = field.BumpProfile.for_params(fam.params)
    desc = {"family": str(fam_path), "family_sha256": io.sha256_file(fam_path),
            "bump": {"lo": bump.lo, "peak": bump.peak, "hi": bump.hi}}
    out = Path(args.out)
    out.write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")
    return [out], f"field over {fam.depth + 1} scales"


def load_field(path) -> field.ExceptionalField:
    try:
        desc = json.loads(Path(path).read_text())
        fam_path = Path(desc["family"])
        if not fam_path.is_absolute():
            fam_path = Path(path).parent / fam_path
        if io.sha256_file(fam_path) != desc["family_sha256"]:
            raise io.FormatError("family file changed since the field was built")
        b = desc["bump"]
        return field.ExceptionalField(io.load_family(fam_path),
                                      field.BumpProfile(b["lo"], b["peak"], b["hi"]))
    except (KeyError, json.JSONDecodeError) as err:
        raise io.FormatError(f"bad field file {path}: {err}") from None


def cmd_sobolev(args):
    f = load_field(args.field)
    rep = field.sobolev_report(f, args.p, args.n_max, res=args.res)
    results = {
        "sobolev": [(l.n, l.value, l.error) for l in rep.layers],
        "sobolev_fit": [(rep.p, rep.slope, rep.predicted, rep.divergent, rep.outside)],
    }
    files = report.emit_report(results, _out_dir(args))
    return files, f"slope {rep.slope:.4g} (log-ratio bound {rep.predicted:.4g})"


def cmd_acl_witness(args):
    f = load_field(args.field)
    w = field.acl_witness(f, args.probes)
    N = f.depth
    header = ["y", "jump", "g", "max_offfamily_dx", "offfamily_probes"] + \
             [f"measure_{n}" for n in range(N + 1)]
    rows = [(w.y[i], w.jump[i], w.g[i], w.max_offfamily_dx[i], int(w.offfamily_probes[i]),
             *w.measure[i]) for i in range(len(w.y))]
    out = report.write_csv(_out_dir(args) / "acl.csv", header, rows)
    return [out], f"max off-family |du/dx| {w.max_offfamily_dx.max():.3g}"


def _path_arg(args, label: str) -> paths.FinePath:
    if args.path:
        return io.load_path(args.path)
    return paths.sample_fine_path(args.T, 2.0 ** -args.log2_steps, _stream(args).substream(label))


def cmd_cover(args):
    p = _path_arg(args, "cover")
    ks = range(args.k_min, args.k_max + 1)
    dec = levelset.cover_decay(p, args.y, ks, args.dyadic_depth)
    ls = levelset.extract_level_set(p, args.y)
    rows = []
    for i, k in enumerate(dec.ks):
        cov = levelset.build_cover(ls, int(k), args.dyadic_depth)
        m = cov.m if isinstance(cov, levelset.CoverFamily) else 0
        rows.append((int(k), bool(dec.feasible[i]), m, dec.root_sums[i], dec.S[i]))
    files = report.emit_report({"cover": rows, "cover_fit": [(dec.slope, dec.slope_se)]},
                               _out_dir(args))
    return files, f"{int(dec.feasible.sum())}/{len(dec.ks)} k feasible"


def cmd_route(args):
    p = _path_arg(args, "route")
    g = _stream(args).substream("queries").generator()
    lo, hi = float(np.min(p.values)), float(np.max(p.values))
    rows, bad = [], 0
    for q in range(args.queries):
        z = (g.uniform(0, p.T), g.uniform(lo, hi))
        w = (g.uniform(0, p.T), g.uniform(lo, hi))
        bound = math.sqrt(2) * math.dist(z, w) + args.eps
        try:
            d = levelset.route_detour(p, z, w, args.eps)
        except levelset.RouteInfeasible:
            rows.append((q, *z, *w, "infeasible", math.nan, bound, -1, -1))
            continue
        m = levelset.validate_detour(d, p)
        ok = d.length <= bound and m["intersections"] <= m["hop_bound"] and m["length_matches"]
        bad += not ok
        rows.append((q, *z, *w, "ok" if ok else "violation", d.length, bound,
                     m["intersections"], m["hop_bound"]))
    out = report.write_csv(_out_dir(args) / "routes.csv",
                           ["query", "zx", "zy", "wx", "wy", "status", "length", "bound",
                            "intersections", "hop_bound"], rows)
    if bad:
        raise CheckFailed(f"{bad} routes broke their contract", [out])
    done = sum(r[5] == "ok" for r in rows)
    return [out], f"{done}/{args.queries} routed, no violations"


def cmd_excursion_checks(args):
    s = _stream(args)
    bm = levelset.bridge_max_check(args.length, args.n, args.trials, s.substream("bridge"))
    kc = levelset.excursion_range_identity_check(args.length, args.n, args.ks_trials,
                                                 s.substream("identity"))
    tb = levelset.excursion_tail_bound_check(args.length, levelset.geometric_lengths(args.length),
                                             args.trials, s.substream("tail"))
    rows = [("bridge_max_sup_error", bm.sup_error, 0.01, bm.sup_error < 0.01),
            ("excursion_range_ks_pvalue", kc.pvalue, 0.01, kc.pvalue > 0.01),
            ("tail_bound_violations", tb.violations, 0, tb.violations == 0)]
    out = report.write_csv(_out_dir(args) / "excursion.csv",
                           ["check", "value", "threshold", "passed"], rows)
    if not all(r[3] for r in rows):
        raise CheckFailed("an excursion-law check failed", [out])
    return [out], "all excursion checks passed"


def cmd_stitch_demo(args):
    rep = levelset.stitching_demo(args.a, args.N, args.trials, _stream(args))
    d = _out_dir(args)
    a = report.write_csv(d / "stitch.csv",
                         ["a", "N", "trials", "first_mean", "p_exceed", "ci_low", "ci_high"],
                         [(rep.a, rep.N, rep.trials, rep.first_mean, rep.p_exceed, *rep.ci)])
    b = report.write_csv(d / "stitch_table.csv", ["q", "N", "all_fail"], rep.table)
    return [a, b], f"P[S_N >= 1] = {rep.p_exceed:.4g}"


def cmd_verify(args):
    rows = verify.run_suite(args.suite, int(_stream(args).master_seed))
    out = report.write_csv(_out_dir(args) / f"verify_{args.suite}.csv", verify.HEADER, rows)
    failed = [r[1] for r in rows if not r[4]]
    if failed:
        raise CheckFailed("failed: " + ", ".join(failed), [out])
    return [out], f"{len(rows)} checks passed"


def cmd_report(args):
    d = _out_dir(args)
    results = {}
    if args.family:
        results["boxes"] = _boxes_rows(io.load_family(args.family))
    if args.path:
        p = io.load_path(args.path)
        step = max(1, (len(p.values) - 1) // args.max_points)
        idx = np.arange(0, len(p.values), step)
        results["path"] = list(zip(idx * p.h, p.values[idx]))
    files = report.emit_report(results, d)
    for name, x, y, logx in (("sobolev", "n", "integral", False), ("cover", "k", "S", True)):
        if name not in results and (d / f"{name}.csv").exists():
            slope = None
            fit = d / f"{name}_fit.csv"
            if fit.exists():
                h, r = report.read_csv(fit)
                slope = r[0][h.index("slope")] if r else None
            files.append(report.decay_svg(d / f"{name}.csv", d / f"{name}.svg", x, y, slope,
                                          logx=logx))
    return files, f"{len(files)} files"


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed; required for stochastic commands")
    common.add_argument("--config", help="key = value file; command-line flags take precedence")
    common.add_argument("--out-dir", default=".", help="directory for tables and the manifest")
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads")

    goodness = argparse.ArgumentParser(add_help=False)
    goodness.add_argument("--K", type=int, default=5)
    goodness.add_argument("--r", type=_fraction, default=Fraction(1, 5))
    goodness.add_argument("--c", type=float, default=0.8)

    fine = argparse.ArgumentParser(add_help=False)
    fine.add_argument("--path", help="saved path (.npz); sampled from the seed if omitted")
    fine.add_argument("--T", type=float, default=1.0)
    fine.add_argument("--log2-steps", type=int, default=20, help="grid step is 2^-N")

    ap = argparse.ArgumentParser(prog="brownlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    commands = {}

    def add(name, fn, parents=(), **kw):
        p = sub.add_parser(name, parents=[common, *parents], **kw)
        p.set_defaults(func=fn)
        commands[name] = p
        return p

    p = add("sample-tree", cmd_sample_tree, help="sample a crossing tree to a binary file")
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--durations", choices=["mean", "sampled"], default="mean")
    p.add_argument("--out", required=True)

    p = add("classify", cmd_classify, help="goodness labels of a saved tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--r", type=_fraction, default=Fraction(1, 5))
    p.add_argument("--c", type=float, default=0.8)
    p.add_argument("--n-max", type=int, default=2)

    p = add("select-family", cmd_select_family, (goodness,), help="sample a nested box family")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--durations", choices=["mean", "sampled"], default="sampled")
    p.add_argument("--out", required=True)

    p = add("estimate-q", cmd_estimate_q, (goodness,), help="probability that a crossing is good")
    p.add_argument("--trials", type=int, default=10_000)

    p = add("fixed-point", cmd_fixed_point, (goodness,), help="survival recursion for labels")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--n-max", type=int, default=10)

    p = add("build-field", cmd_build_field, help="describe the exceptional function of a family")
    p.add_argument("--family", required=True)
    p.add_argument("--out", required=True)

    p = add("sobolev", cmd_sobolev, help="layer integrals of |grad u|^p")
    p.add_argument("--field", required=True)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--n-max", type=int, default=2)
    p.add_argument("--res", type=int, default=8)

    p = add("acl-witness", cmd_acl_witness, help="jumps and off-family x-derivatives on lines")
    p.add_argument("--field", required=True)
    p.add_argument("--probes", type=_floats, default=[0.3, 0.4, 0.5, 0.6])

    p = add("cover", cmd_cover, (fine,), help="dyadic covers of a level set for a range of k")
    p.add_argument("--y", type=float, default=0.3)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--dyadic-depth", type=int, default=20)

    p = add("route", cmd_route, (fine,), help="detour paths for random endpoint pairs")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--eps", type=float, default=0.05)

    p = add("excursion-checks", cmd_excursion_checks, help="bridge and excursion maximum laws")
    p.add_argument("--length", type=float, default=1.0)
    p.add_argument("--n", type=int, default=2 ** 12)
    p.add_argument("--trials", type=int, default=20_000)
    p.add_argument("--ks-trials", type=int, default=10_000)

    p = add("stitch-demo", cmd_stitch_demo, help="successive exit times of a fixed width")
    p.add_argument("--a", type=float, default=0.1)
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--trials", type=int, default=100_000)

    p = add("verify", cmd_verify, help="run a self-check suite")
    p.add_argument("--suite", choices=sorted(verify.SUITES), default="trivial")

    p = add("report", cmd_report, help="CSV tables and SVG figures")
    p.add_argument("--family")
    p.add_argument("--path")
    p.add_argument("--max-points", type=int, default=20_000)
    ap.commands = commands
    return ap


def _parse(argv) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sp = ap.commands[args.command]
        known = {a.dest: a for a in sp._actions}
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for k, v in cfg.items():
            act = known[k]
            defaults[k] = act.type(v) if act.type else v
        sp.set_defaults(**defaults)
        args = ap.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except (UsageError, argparse.ArgumentTypeError, OSError) as err:
        print(f"brownlab: {err}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        outputs, summary = args.func(args)
        status = 0
    except UsageError as err:
        print(f"brownlab: {err}", file=sys.stderr)
        return 2
    except (CheckFailed, io.FormatError, boxes.SelectionError) as err:
        print(f"brownlab {args.command}: {err}", file=sys.stderr)
        outputs, summary, status = getattr(err, "outputs", []), str(err), 1
    except ValueError as err:
        print(f"brownlab {args.command}: {err}", file=sys.stderr)
        return 2
    params = {k: (str(v) if isinstance(v, Fraction) else v)
              for k, v in sorted(vars(args).items()) if k not in ("func",)}
    outputs = [Path(o) for o in outputs]
    if args.command in ("sample-tree", "select-family", "build-field"):
        man = Path(args.out + ".manifest.json")
    else:
        man = _out_dir(args) / f"{args.command}.manifest.json"
    io.write_manifest(man, args.command, params, args.seed, __version__,
                      time.perf_counter() - t0, outputs)
    if status == 0:
        print(summary)
    return status


if __name__ == "__main__":
    sys.exit(main())
