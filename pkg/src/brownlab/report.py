"""CSV tables and static SVG figures.

CSV is canonical. Every figure is drawn from rows read back from its CSV
twin, so a plotted number always appears verbatim in a table.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

# documented column sets for the tables the CLI emits
HEADERS = {
    "boxes": ["scale", "index", "x0", "x1", "y0", "y1"],
    "path": ["t", "value"],
    "sobolev": ["n", "integral", "quad_error"],
    "sobolev_fit": ["p", "slope", "predicted", "divergent", "outside"],
    "cover": ["k", "feasible", "intervals", "root_sum", "S"],
    "cover_fit": ["slope", "slope_se"],
}


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row of {len(row)} fields under a {len(header)}-column header")
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} has no header")
    return rows[0], rows[1:]


def column(rows, header, name, cast=float) -> list:
    i = header.index(name)
    return [cast(r[i]) for r in rows]


# ---------------------------------------------------------------- svg

class _Canvas:
    def __init__(self, width=640, height=400, pad=48):
        self.w, self.h, self.pad = width, height, pad
        self.items: list[str] = []

    def frame(self, xlo, xhi, ylo, yhi):
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            yhi = ylo + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def X(self, x):
        return self.pad + (x - self.xlo) / (self.xhi - self.xlo) * (self.w - 2 * self.pad)

    def Y(self, y):
        return self.h - self.pad - (y - self.ylo) / (self.yhi - self.ylo) * (self.h - 2 * self.pad)

    def add(self, s: str):
        self.items.append(s)

    def text(self, x, y, s, size=12, anchor="start"):
        self.add(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" '
                 f'text-anchor="{anchor}" font-family="sans-serif">{escape(s)}</text>')

    def axes(self, xlabel="", ylabel=""):
        p, w, h = self.pad, self.w, self.h
        self.add(f'<rect x="{p}" y="{p}" width="{w - 2 * p}" height="{h - 2 * p}" '
                 'fill="none" stroke="black" stroke-width="1"/>')
        self.text(w / 2, h - 12, xlabel, anchor="middle")
        self.text(14, h / 2, ylabel, anchor="middle")
        self.text(p, h - p + 16, f"{self.xlo:.3g}")
        self.text(w - p, h - p + 16, f"{self.xhi:.3g}", anchor="end")
        self.text(p - 4, h - p, f"{self.ylo:.3g}", anchor="end")
        self.text(p - 4, p + 4, f"{self.yhi:.3g}", anchor="end")

    def polyline(self, xs, ys, color="black", width=1.0):
        pts = " ".join(f"{self.X(x):.2f},{self.Y(y):.2f}" for x, y in zip(xs, ys))
        self.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def dots(self, xs, ys, color="black"):
        for x, y in zip(xs, ys):
            self.add(f'<circle cx="{self.X(x):.2f}" cy="{self.Y(y):.2f}" r="3" fill="{color}"/>')

    def svg(self) -> str:
        body = "\n".join(self.items)
        return ('<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
                f'width="{self.w}" height="{self.h}">\n{body}\n</svg>\n')


_PALETTE = ["#1f4e79", "#c0504d", "#4f8f3a", "#8064a2", "#d08a1c", "#2f9c9c"]


def boxes_svg(boxes_csv, out, path_csv=None) -> Path:
    """Box rectangles per scale, optionally over a sampled path."""
    hdr, rows = read_csv(boxes_csv)
    cols = {n: column(rows, hdr, n) for n in ("x0", "x1", "y0", "y1")}
    scale = column(rows, hdr, "scale", int)
    pts = None
    if path_csv is not None:
        ph, prow = read_csv(path_csv)
        pts = (column(prow, ph, "t"), column(prow, ph, "value"))
    xs = cols["x0"] + cols["x1"] + (pts[0] if pts else [])
    ys = cols["y0"] + cols["y1"] + (pts[1] if pts else [])
    c = _Canvas(800, 500)
    c.frame(min(xs, default=0.0), max(xs, default=1.0), min(ys, default=0.0), max(ys, default=1.0))
    c.axes("time", "level")
    for n, x0, x1, y0, y1 in zip(scale, cols["x0"], cols["x1"], cols["y0"], cols["y1"]):
        color = _PALETTE[n % len(_PALETTE)]
        c.add(f'<rect x="{c.X(x0):.2f}" y="{c.Y(y1):.2f}" width="{c.X(x1) - c.X(x0):.2f}" '
              f'height="{c.Y(y0) - c.Y(y1):.2f}" fill="{color}" fill-opacity="0.08" '
              f'stroke="{color}" stroke-width="0.6" data-row="{n},{x0!r},{x1!r},{y0!r},{y1!r}"/>')
    if pts:
        c.polyline(*pts, width=0.6)
    Path(out).write_text(c.svg())
    return Path(out)


def decay_svg(table_csv, out, xname, yname, slope=None, title="", logx=False) -> Path:
    """Log-scale plot of one column against another with a slope annotation."""
    hdr, rows = read_csv(table_csv)
    x = np.array(column(rows, hdr, xname))
    if logx:
        x = np.log(x)
        xname = f"log {xname}"
    y = np.array(column(rows, hdr, yname))
    ok = np.isfinite(y) & (y > 0)
    c = _Canvas()
    ly = np.log(y[ok]) if ok.any() else np.zeros(1)
    c.frame(float(x.min(initial=0.0)), float(x.max(initial=1.0)), float(ly.min()), float(ly.max()))
    c.axes(xname, f"log {yname}")
    if ok.any():
        c.polyline(x[ok], ly, color=_PALETTE[0], width=1.5)
        c.dots(x[ok], ly, color=_PALETTE[0])
    if title:
        c.text(c.w / 2, 24, title, size=14, anchor="middle")
    if slope is not None:
        c.text(c.w - c.pad, c.pad - 8, f"slope = {slope}", anchor="end")
    Path(out).write_text(c.svg())
    return Path(out)


def emit_report(results: dict, out_dir) -> list[Path]:
    """Write each table as CSV; draw the figures whose source tables are present.

    ``results`` maps a table name from ``HEADERS`` (or any name, with an
    explicit header) to rows, or to a ``(header, rows)`` pair.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, val in results.items():
        header, rows = val if isinstance(val, tuple) else (HEADERS[name], val)
        written.append(write_csv(out / f"{name}.csv", header, rows))
    if (out / "boxes.csv").exists() and "boxes" in results:
        path_csv = out / "path.csv" if "path" in results else None
        written.append(boxes_svg(out / "boxes.csv", out / "boxes.svg", path_csv))
    if "sobolev" in results:
        slope = None
        if "sobolev_fit" in results:
            h, r = read_csv(out / "sobolev_fit.csv")
            slope = r[0][h.index("slope")] if r else None
        written.append(decay_svg(out / "sobolev.csv", out / "sobolev.svg", "n", "integral",
                                 slope, "layer integrals"))
    if "cover" in results:
        slope = None
        if "cover_fit" in results:
            h, r = read_csv(out / "cover_fit.csv")
            slope = r[0][h.index("slope")] if r else None
        written.append(decay_svg(out / "cover.csv", out / "cover.svg", "k", "S", slope,
                                 "excursion sums", logx=True))
    return written
