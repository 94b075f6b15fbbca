"""Deterministic SVG figures built from result records.

Each file starts with a comment giving the data-to-pixel mapping, so numbers
can be read back from coordinates::

    <!-- axis-map x0=.. x1=.. xmin=.. xmax=.. y0=.. y1=.. ymin=.. ymax=.. xscale=ln|linear -->

A data point (u, v) is drawn at px = x0 + (X(u) - xmin) / (xmax - xmin) * (x1 - x0)
and py = y0 - (v - ymin) / (ymax - ymin) * (y0 - y1), where X is ln or identity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .model import size_in_millions
from .numerics import DataError
from .schedule import warmdown_tag
from .stats import (ScalingFit, fit_log_linear, paired_penalty, penalty_points, predict_interval,
                    summarize_cell)
from .trainer import RunRecord

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 420
PLOT = (70.0, 590.0, 360.0, 40.0)  # x0, x1, y0 (bottom), y1 (top)
COLORS = {"FP16": "#1f77b4", "INT8": "#ff7f0e", "INT6": "#d62728", "INT4": "#2ca02c"}
_FALLBACK = ("#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _num(v: float) -> str:
    return f"{v:.6f}"


@dataclass
class AxisMap:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    xscale: str = "linear"
    x0: float = PLOT[0]
    x1: float = PLOT[1]
    y0: float = PLOT[2]
    y1: float = PLOT[3]

    def fx(self, u: float) -> float:
        X = math.log(u) if self.xscale == "ln" else u
        return self.x0 + (X - self.xmin) / (self.xmax - self.xmin) * (self.x1 - self.x0)

    def fy(self, v: float) -> float:
        return self.y0 - (v - self.ymin) / (self.ymax - self.ymin) * (self.y0 - self.y1)

    def inv_x(self, px: float) -> float:
        X = self.xmin + (px - self.x0) / (self.x1 - self.x0) * (self.xmax - self.xmin)
        return math.exp(X) if self.xscale == "ln" else X

    def inv_y(self, py: float) -> float:
        return self.ymin + (self.y0 - py) / (self.y0 - self.y1) * (self.ymax - self.ymin)

    def header(self) -> str:
        vals = " ".join(f"{k}={getattr(self, k)!r}" for k in ("x0", "x1", "xmin", "xmax", "y0", "y1", "ymin", "ymax"))
        return f"<!-- axis-map {vals} xscale={self.xscale} -->"

    @classmethod
    def parse(cls, svg: str) -> "AxisMap":
        line = next(l for l in svg.splitlines() if l.startswith("<!-- axis-map"))
        kv = dict(tok.split("=", 1) for tok in line[len("<!-- axis-map "):-len(" -->")].split())
        scale = kv.pop("xscale")
        return cls(**{k: float(v) for k, v in kv.items()}, xscale=scale)


def _padded(lo: float, hi: float, frac: float = 0.08) -> tuple[float, float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = (hi - lo) * frac
    return lo - pad, hi + pad


@dataclass
class Figure:
    title: str
    xlabel: str
    ylabel: str
    axes: AxisMap
    body: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def add(self, element: str) -> None:
        self.body.append(element)

    def polyline(self, pts, color: str, cls: str, dashed: bool = False) -> None:
        if len(pts) < 2:
            return
        coords = " ".join(f"{_num(self.axes.fx(u))},{_num(self.axes.fy(v))}" for u, v in pts)
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        self.add(f'<polyline class="{cls}" points="{coords}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')

    def band(self, xs, lo, hi, color: str, cls: str) -> None:
        pts = [(u, v) for u, v in zip(xs, hi)] + [(u, v) for u, v in zip(reversed(xs), reversed(lo))]
        coords = " ".join(f"{_num(self.axes.fx(u))},{_num(self.axes.fy(v))}" for u, v in pts)
        self.add(f'<polygon class="{cls}" points="{coords}" fill="{color}" fill-opacity="0.18" stroke="none"/>')

    def marker(self, u: float, v: float, color: str, cls: str, square: bool = False) -> None:
        px, py = self.axes.fx(u), self.axes.fy(v)
        if square:
            self.add(f'<rect class="{cls}" x="{_num(px - 4)}" y="{_num(py - 4)}" width="8" height="8" fill="{color}"/>')
        else:
            self.add(f'<circle class="{cls}" cx="{_num(px)}" cy="{_num(py)}" r="4" fill="{color}"/>')

    def errorbar(self, u: float, lo: float, hi: float, color: str) -> None:
        px = _num(self.axes.fx(u))
        self.add(f'<line class="errorbar" x1="{px}" y1="{_num(self.axes.fy(lo))}" x2="{px}" '
                 f'y2="{_num(self.axes.fy(hi))}" stroke="{color}" stroke-width="1"/>')

    def legend(self, entries: list[tuple[str, str]]) -> None:
        for i, (label, color) in enumerate(entries):
            y = PLOT[3] + 14 + 16 * i
            self.add(f'<rect x="{PLOT[1] - 110}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
            self.add(f'<text x="{PLOT[1] - 95}" y="{y}" font-size="11">{escape(label)}</text>')

    def _ticks(self) -> list[str]:
        a = self.axes
        out = []
        for v in np.linspace(a.ymin, a.ymax, 5):
            py = a.fy(v)
            out.append(f'<line x1="{_num(a.x0 - 4)}" y1="{_num(py)}" x2="{_num(a.x0)}" y2="{_num(py)}" stroke="#000"/>')
            out.append(f'<text x="{_num(a.x0 - 6)}" y="{_num(py + 4)}" font-size="10" text-anchor="end">{v:.4g}</text>')
        for X in np.linspace(a.xmin, a.xmax, 5):
            u = math.exp(X) if a.xscale == "ln" else X
            px = a.fx(u)
            out.append(f'<line x1="{_num(px)}" y1="{_num(a.y0)}" x2="{_num(px)}" y2="{_num(a.y0 + 4)}" stroke="#000"/>')
            out.append(f'<text x="{_num(px)}" y="{_num(a.y0 + 16)}" font-size="10" text-anchor="middle">{u:.3g}</text>')
        return out

    def render(self) -> str:
        a = self.axes
        head = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            a.header(),
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#fff"/>',
            f'<text x="{WIDTH / 2}" y="22" font-size="14" text-anchor="middle">{escape(self.title)}</text>',
            f'<line x1="{a.x0}" y1="{a.y0}" x2="{a.x1}" y2="{a.y0}" stroke="#000"/>',
            f'<line x1="{a.x0}" y1="{a.y0}" x2="{a.x0}" y2="{a.y1}" stroke="#000"/>',
            f'<text x="{(a.x0 + a.x1) / 2}" y="{HEIGHT - 12}" font-size="12" text-anchor="middle">{escape(self.xlabel)}</text>',
            f'<text x="16" y="{(a.y0 + a.y1) / 2}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 16 {(a.y0 + a.y1) / 2})">{escape(self.ylabel)}</text>',
        ]
        notes = [f"<!-- warning: {escape(w)} -->" for w in self.warnings]
        return "\n".join(head + notes + self._ticks() + self.body + ["</svg>", ""])


def _color(name: str, i: int) -> str:
    return COLORS.get(name, _FALLBACK[i % len(_FALLBACK)])


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def warmdown_figure(records: list[RunRecord], size: str | None = None, lr: str = "lr1x") -> Figure:
    """Final BPB against warmdown fraction, one line per bit-width, +-1 SEM bars."""
    recs = [r for r in records if r.status == "completed" and r.spec["lr"] == lr]
    if size is None and recs:
        size = sorted({r.spec["size"] for r in recs}, key=size_in_millions)[0]
    recs = [r for r in recs if r.spec["size"] == size]
    if not recs:
        raise DataError(f"no completed records for size={size} lr={lr}")
    fracs = sorted({r.spec["warmdown"] for r in recs})
    bits = sorted({r.spec["bits"] for r in recs}, key=lambda b: list(COLORS).index(b) if b in COLORS else 99)
    cells = {}
    for b in bits:
        for f in fracs:
            cell = [r for r in recs if r.spec["bits"] == b and r.spec["warmdown"] == f]
            if cell:
                cells[b, f] = summarize_cell(cell)
    lows = [c.mean - (c.sem or 0) for c in cells.values()]
    highs = [c.mean + (c.sem or 0) for c in cells.values()]
    ymin, ymax = _padded(min(lows), max(highs))
    xmin, xmax = _padded(min(fracs), max(fracs), 0.05)
    fig = Figure(f"Validation BPB vs warmdown fraction ({size}, {lr})", "warmdown fraction",
                 "final validation BPB", AxisMap(xmin, xmax, ymin, ymax))
    for i, b in enumerate(bits):
        color = _color(b, i)
        run: list[tuple[float, float]] = []
        for f in fracs:
            c = cells.get((b, f))
            if c is None:
                fig.warnings.append(f"missing cell {b} {warmdown_tag(f)}")
                fig.polyline(run, color, f"series-{b}")
                run = []
                continue
            run.append((f, c.mean))
            fig.marker(f, c.mean, color, f"point-{b}")
            if c.sem:
                fig.errorbar(f, c.mean - c.sem, c.mean + c.sem, color)
        fig.polyline(run, color, f"series-{b}")
    fig.legend([(b, _color(b, i)) for i, b in enumerate(bits)])
    return fig


def scaling_figure(records: list[RunRecord], heldout: set[str] | None = None, lr: str = "lr1x",
                   warmdown: float = 0.33, candidate: str = "INT6", baseline: str = "FP16",
                   fit: ScalingFit | None = None, points: dict[str, float] | None = None,
                   band_samples: int = 41) -> tuple[Figure, ScalingFit]:
    """Paired penalty against ln(size) with the fit line, PI band and held-out points.

    Either ``records`` or a precomputed ``points`` mapping {size name: mBPB} is used.
    """
    heldout = set(heldout or ())
    if points is None:
        points = {s: p.mean for s, p in penalty_points(records, lr, warmdown, candidate, baseline).items()}
    fit_pts = {s: v for s, v in points.items() if s not in heldout}
    held_pts = {s: v for s, v in points.items() if s in heldout}
    if fit is None:
        fit = fit_log_linear((size_in_millions(s), v) for s, v in fit_pts.items())
    sizes = [size_in_millions(s) for s in points]
    lo_s, hi_s = min(sizes), max(sizes)
    xs = [math.exp(x) for x in np.linspace(math.log(lo_s), math.log(hi_s), band_samples)]
    band = [predict_interval(fit, u) for u in xs]
    lo = [p - h for p, h in band]
    hi = [p + h for p, h in band]
    ymin, ymax = _padded(min(lo + list(points.values())), max(hi + list(points.values())))
    xmin, xmax = _padded(math.log(lo_s), math.log(hi_s), 0.05)
    fig = Figure(f"{candidate} penalty vs model size", "model size (M params, log scale)",
                 f"{candidate} − {baseline} (mBPB)", AxisMap(xmin, xmax, ymin, ymax, "ln"))
    fig.band(xs, lo, hi, "#1f77b4", "pi-band")
    fig.polyline([(u, fit.predict(u)) for u in xs], "#1f77b4", "fit-line")
    for s, v in sorted(fit_pts.items(), key=lambda kv: size_in_millions(kv[0])):
        fig.marker(size_in_millions(s), v, "#1f77b4", "fit-point")
    for s, v in sorted(held_pts.items(), key=lambda kv: size_in_millions(kv[0])):
        fig.marker(size_in_millions(s), v, "#d62728", "heldout-point", square=True)
    fig.legend([("fit points", "#1f77b4"), ("held-out", "#d62728")])
    return fig, fit


def contrast_figure(records: list[RunRecord], factor: str, level_a, level_b, **conds) -> Figure:
    """Paired A - B penalty against size with a 95% CI band."""
    recs = [r for r in records if r.status == "completed" and all(r.spec.get(k) == v for k, v in conds.items())]
    sizes = sorted({r.spec["size"] for r in recs}, key=size_in_millions)
    pens = {}
    warnings = []
    for s in sizes:
        a = [r for r in recs if r.spec["size"] == s and r.spec[factor] == level_a]
        b = [r for r in recs if r.spec["size"] == s and r.spec[factor] == level_b]
        try:
            pens[s] = paired_penalty(a, b)
        except DataError:
            warnings.append(f"size {s}: fewer than 2 shared seeds")
    if not pens:
        raise DataError("no size has two shared seeds for the contrast")
    us = [size_in_millions(s) for s in pens]
    lo = [p.ci_low for p in pens.values()]
    hi = [p.ci_high for p in pens.values()]
    ymin, ymax = _padded(min(lo + [0.0]), max(hi + [0.0]))
    if len(us) > 1:
        xmin, xmax = _padded(math.log(min(us)), math.log(max(us)), 0.05)
    else:
        xmin, xmax = math.log(us[0]) - 0.5, math.log(us[0]) + 0.5
    la = warmdown_tag(level_a) if factor == "warmdown" else str(level_a)
    lb = warmdown_tag(level_b) if factor == "warmdown" else str(level_b)
    fig = Figure(f"Paired {la} − {lb} penalty vs model size", "model size (M params, log scale)",
                 f"{la} − {lb} (mBPB)", AxisMap(xmin, xmax, ymin, ymax, "ln"))
    fig.warnings.extend(warnings)
    fig.band(us, lo, hi, "#2ca02c", "ci-band")
    fig.polyline([(min(us), 0.0), (max(us), 0.0)], "#000", "zero-line", dashed=True)
    fig.polyline(list(zip(us, [p.mean for p in pens.values()])), "#2ca02c", "penalty-line")
    for u, p in zip(us, pens.values()):
        fig.marker(u, p.mean, "#2ca02c", "penalty-point")
    return fig
