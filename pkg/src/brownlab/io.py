"""Flat-file formats: binary crossing trees, npz for paths, families and covers,
and JSON run manifests."""
from __future__ import annotations

import hashlib
import json
import struct
from fractions import Fraction
from pathlib import Path

import numba
import numpy as np

from .boxes import GoodnessParams, SelectedFamily
from .levelset import CoverFamily
from .paths import CrossingTree, FinePath


class FormatError(ValueError):
    """A file is truncated, has the wrong magic or version, or fails validation."""


# ---------------------------------------------------------------- tree files

TREE_MAGIC = b"BLTREE\0\0"
TREE_VERSION = 1
_HEADER = struct.Struct("<8sHHHBQQ")
_MODES = {"none": 0, "mean": 1, "sampled": 2}
RECORD = np.dtype([("depth", "u1"), ("direction", "i1"), ("duration", "<f8"),
                   ("child_count", "<u4"), ("key", "<u8")])


def _preorder(tree: CrossingTree) -> list[np.ndarray]:
    """Depth-first position of every node, level by level."""
    D = tree.max_depth
    size = [None] * (D + 1)
    size[D] = np.ones(len(tree.direction[D]), np.int64)
    for d in range(D - 1, -1, -1):
        ptr = tree.child_ptr[d]
        csum = np.concatenate([[0], np.cumsum(size[d + 1])])
        size[d] = 1 + csum[ptr[1:]] - csum[ptr[:-1]]
    pos = [np.zeros(1, np.int64)]
    for d in range(D):
        ptr = tree.child_ptr[d]
        counts = np.diff(ptr)
        csum = np.concatenate([[0], np.cumsum(size[d + 1])])
        before = csum[:-1] - np.repeat(csum[ptr[:-1]], counts)
        pos.append(np.repeat(pos[d] + 1, counts) + before)
    return pos


def save_tree(tree: CrossingTree, path) -> None:
    """Header, then one record per node in depth-first order."""
    rec = np.zeros(tree.node_count, RECORD)
    for d, pos in enumerate(_preorder(tree)):
        rec["depth"][pos] = d
        rec["direction"][pos] = tree.direction[d]
        rec["key"][pos] = tree.key[d]
        if tree.duration:
            rec["duration"][pos] = tree.duration[d]
        if d < tree.max_depth:
            rec["child_count"][pos] = np.diff(tree.child_ptr[d])
    header = _HEADER.pack(TREE_MAGIC, TREE_VERSION, tree.K, tree.max_depth,
                          _MODES[tree.duration_mode], tree.seed, tree.node_count)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


@numba.njit(cache=True)
def _check_preorder(depth, child_count):
    """-1 if depths and child counts describe one tree in depth-first order,
    else the index of the first inconsistent record."""
    n = len(depth)
    stack = np.empty(256, np.int64)      # remaining children per open ancestor
    top = 0
    if n == 0 or depth[0] != 0:
        return 0
    stack[0] = child_count[0]
    for i in range(1, n):
        while top >= 0 and stack[top] == 0:
            top -= 1
        if top < 0 or depth[i] != top + 1:
            return i
        stack[top] -= 1
        top += 1
        stack[top] = child_count[i]
    while top >= 0:
        if stack[top] != 0:
            return n
        top -= 1
    return -1


def load_tree(path, rtol: float = 1e-9) -> CrossingTree:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, K, D, mode, seed, count = _HEADER.unpack_from(data)
    if magic != TREE_MAGIC:
        raise FormatError("not a crossing-tree file")
    if version != TREE_VERSION:
        raise FormatError(f"unsupported tree file version {version}")
    body = data[_HEADER.size:]
    if len(body) != count * RECORD.itemsize:
        raise FormatError(f"expected {count} records, found {len(body) / RECORD.itemsize:g}")
    rec = np.frombuffer(body, RECORD)
    if rec["depth"].max(initial=0) > D:
        raise FormatError("record depth exceeds the header depth")
    if (rec["child_count"][rec["depth"] == D] != 0).any():
        raise FormatError("leaf record with children")
    if (rec["child_count"][rec["depth"] < D] == 0).any():
        raise FormatError("inner node without children")
    bad = _check_preorder(rec["depth"].astype(np.int64), rec["child_count"].astype(np.int64))
    if bad >= 0:
        raise FormatError(f"child counts inconsistent at record {bad}")
    mode_name = {v: k for k, v in _MODES.items()}.get(mode)
    if mode_name is None:
        raise FormatError(f"unknown duration mode {mode}")
    direction, key, child_ptr, duration = [], [], [], []
    for d in range(D + 1):
        sel = rec[rec["depth"] == d]
        direction.append(sel["direction"].copy())
        key.append(sel["key"].copy())
        duration.append(sel["duration"].copy())
        if d < D:
            child_ptr.append(np.concatenate([[0], np.cumsum(sel["child_count"], dtype=np.int64)]))
    tree = CrossingTree(int(K), int(D), direction, key, child_ptr,
                        duration if mode_name != "none" else [], mode_name, int(seed))
    if mode_name != "none":
        for d in range(D):
            ptr = child_ptr[d]
            sums = np.add.reduceat(duration[d + 1], ptr[:-1]) if len(duration[d + 1]) else 0
            if not np.allclose(sums, duration[d], rtol=rtol, atol=0):
                raise FormatError(f"durations at depth {d} do not match their children")
    return tree


def trees_equal(a: CrossingTree, b: CrossingTree) -> bool:
    if (a.K, a.max_depth, a.duration_mode, a.seed) != (b.K, b.max_depth, b.duration_mode, b.seed):
        return False
    pairs = [(a.direction, b.direction), (a.key, b.key), (a.child_ptr, b.child_ptr),
             (a.duration, b.duration)]
    return all(len(x) == len(y) and all(np.array_equal(p, q) for p, q in zip(x, y))
               for x, y in pairs)


# ---------------------------------------------------------------- npz objects

def _save_npz(path, kind: str, **arrays) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, kind=np.array(kind), version=np.array(1), **arrays)


def _open_npz(path, kind: str):
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as err:
        raise FormatError(f"cannot read {path}: {err}") from None
    try:
        if str(z["kind"]) != kind:
            raise FormatError(f"{path} holds a {z['kind']}, not a {kind}")
        if int(z["version"]) != 1:
            raise FormatError(f"unsupported {kind} version")
        return {k: z[k] for k in z.files}
    except KeyError as err:
        raise FormatError(f"{path} is missing {err}") from None
    except Exception as err:                  # zip member damage surfaces here
        if isinstance(err, FormatError):
            raise
        raise FormatError(f"cannot read {path}: {err}") from None


def save_path(p: FinePath, path) -> None:
    _save_npz(path, "fine_path", h=np.array(p.h), values=np.asarray(p.values))


def load_path(path) -> FinePath:
    z = _open_npz(path, "fine_path")
    return FinePath(float(z["h"]), z["values"])


def _params_array(p: GoodnessParams) -> np.ndarray:
    return np.array([p.K, p.r.numerator, p.r.denominator], np.int64)


def _params_from(arr, c) -> GoodnessParams:
    return GoodnessParams(int(arr[0]), Fraction(int(arr[1]), int(arr[2])), float(c))


def save_family(fam: SelectedFamily, path) -> None:
    arrays = {"params": _params_array(fam.params), "c": np.array(fam.params.c),
              "depth": np.array(fam.depth), "mode": np.array(fam.duration_mode)}
    for name in ("x0", "x1", "ell", "height", "parent"):
        for n, a in enumerate(getattr(fam, name)):
            arrays[f"{name}_{n}"] = a
    _save_npz(path, "family", **arrays)


def load_family(path, validate: bool = True) -> SelectedFamily:
    z = _open_npz(path, "family")
    D = int(z["depth"])
    try:
        parts = {name: [z[f"{name}_{n}"] for n in range(D + 1)]
                 for name in ("x0", "x1", "ell", "height", "parent")}
    except KeyError as err:
        raise FormatError(f"family file is missing {err}") from None
    fam = SelectedFamily(_params_from(z["params"], z["c"]), D, duration_mode=str(z["mode"]), **parts)
    if validate:
        try:
            fam.validate()
        except ValueError as err:
            raise FormatError(str(err)) from None
    return fam


def families_equal(a: SelectedFamily, b: SelectedFamily) -> bool:
    if a.params != b.params or a.depth != b.depth or a.duration_mode != b.duration_mode:
        return False
    return all(np.array_equal(p, q)
               for name in ("x0", "x1", "ell", "height", "parent")
               for p, q in zip(getattr(a, name), getattr(b, name)))


_COVER_ARRAYS = ("lo", "hi", "first", "last", "a_star", "b_star")


def save_cover(cov: CoverFamily, path) -> None:
    meta = np.array([cov.k, cov.size_ok, cov.root_sum_ok], np.int64)
    _save_npz(path, "cover", meta=meta, method=np.array(cov.method),
              delta=np.array(np.nan if cov.delta is None else cov.delta),
              **{k: getattr(cov, k) for k in _COVER_ARRAYS})


def load_cover(path) -> CoverFamily:
    z = _open_npz(path, "cover")
    k, size_ok, root_ok = (int(v) for v in z["meta"])
    delta = float(z["delta"])
    return CoverFamily(k, *(z[a] for a in _COVER_ARRAYS),
                       None if np.isnan(delta) else delta, str(z["method"]),
                       bool(size_ok), bool(root_ok))


def covers_equal(a: CoverFamily, b: CoverFamily) -> bool:
    return ((a.k, a.delta, a.method, a.size_ok, a.root_sum_ok)
            == (b.k, b.delta, b.method, b.size_ok, b.root_sum_ok)
            and all(np.array_equal(getattr(a, n), getattr(b, n)) for n in _COVER_ARRAYS))


# ---------------------------------------------------------------- manifests

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command: str, params: dict, seed, version: str,
                   wall_time: float, outputs) -> dict:
    man = {
        "command": command,
        "params": params,
        "seed": seed,
        "version": version,
        "wall_time": round(wall_time, 3),
        "outputs": {str(Path(o).name): sha256_file(o) for o in outputs if Path(o).is_file()},
    }
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")
    return man
