"""Minimal deterministic SVG line plots (axes, ticks, series, legend).

Coordinates are printed with fixed precision so identical inputs give
identical bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

from .io import atomic_write_text

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


@dataclass
class Series:
    label: str
    x: list
    y: list
    markers: bool = True
    dashed: bool = False


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    width: int = 640
    height: int = 420
    series: list = field(default_factory=list)
    hlines: list = field(default_factory=list)  # (y, label)

    def add(self, label, x, y, **kw) -> "Plot":
        self.series.append(Series(label, list(x), list(y), **kw))
        return self


def _f(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        if b - a < 1:
            b = a + 1
        step = max(1, (b - a) // 6)
        return [float(k) for k in range(a, b + 1, step)]
    span = hi - lo
    raw = span / 5 if span > 0 else 1.0
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=mag * 10)
    start = math.floor(lo / step) * step
    ticks, t = [], start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _tick_label(t: float, log: bool) -> str:
    if log:
        v = 10 ** t
        return f"{v:g}"
    return f"{t:g}"


def render(plot: Plot) -> str:
    W, H = plot.width, plot.height
    left, right, top, bottom = 70, 170, 40, 55
    pw, ph = W - left - right, H - top - bottom

    def tx(v):
        return math.log10(v) if plot.logx else v

    def ty(v):
        return math.log10(v) if plot.logy else v

    pts = []
    for s in plot.series:
        for x, y in zip(s.x, s.y):
            if x is None or y is None or not (math.isfinite(x) and math.isfinite(y)):
                continue
            if (plot.logx and x <= 0) or (plot.logy and y <= 0):
                continue
            pts.append((tx(x), ty(y)))
    for y, _ in plot.hlines:
        if not plot.logy or y > 0:
            pts.append((pts[0][0] if pts else 0.0, ty(y)))
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>']
    if plot.title:
        out.append(f'<text x="{_f(left + pw / 2)}" y="22" text-anchor="middle" font-size="14">'
                   f'{escape(plot.title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(x0, x1, plot.logx):
        if x0 - 1e-12 <= t <= x1 + 1e-12:
            X = px(t)
            out.append(f'<line x1="{_f(X)}" y1="{top + ph}" x2="{_f(X)}" y2="{top + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{_f(X)}" y="{top + ph + 18}" text-anchor="middle">'
                       f'{escape(_tick_label(t, plot.logx))}</text>')
    for t in _ticks(y0, y1, plot.logy):
        if y0 - 1e-12 <= t <= y1 + 1e-12:
            Y = py(t)
            out.append(f'<line x1="{left - 5}" y1="{_f(Y)}" x2="{left}" y2="{_f(Y)}" stroke="black"/>')
            out.append(f'<text x="{left - 8}" y="{_f(Y + 4)}" text-anchor="end">'
                       f'{escape(_tick_label(t, plot.logy))}</text>')
    if plot.xlabel:
        out.append(f'<text x="{_f(left + pw / 2)}" y="{H - 12}" text-anchor="middle">'
                   f'{escape(plot.xlabel)}</text>')
    if plot.ylabel:
        out.append(f'<text x="16" y="{_f(top + ph / 2)}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {_f(top + ph / 2)})">{escape(plot.ylabel)}</text>')
    for y, label in plot.hlines:
        if plot.logy and y <= 0:
            continue
        Y = py(ty(y))
        out.append(f'<line x1="{left}" y1="{_f(Y)}" x2="{left + pw}" y2="{_f(Y)}" stroke="gray" '
                   f'stroke-dasharray="2,3"/>')
        out.append(f'<text x="{left + pw - 4}" y="{_f(Y - 4)}" text-anchor="end" fill="gray">'
                   f'{escape(label)}</text>')
    for i, s in enumerate(plot.series):
        color = PALETTE[i % len(PALETTE)]
        seg = [(px(tx(x)), py(ty(y))) for x, y in zip(s.x, s.y)
               if x is not None and y is not None and math.isfinite(x) and math.isfinite(y)
               and not (plot.logx and x <= 0) and not (plot.logy and y <= 0)]
        if len(seg) > 1:
            d = " ".join(f"{_f(a)},{_f(b)}" for a, b in seg)
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        if s.markers:
            for a, b in seg:
                out.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="2.5" fill="{color}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save(plot: Plot, path):
    return atomic_write_text(path, render(plot))
