"""Minimal static SVG line charts (axes, ticks, legend, polylines)."""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_chart(path, series: Sequence[tuple[str, np.ndarray, np.ndarray]], title: str = "",
               xlabel: str = "", ylabel: str = "", ylim: tuple[float, float] | None = None,
               width: int = 720, height: int = 360):
    """Write ``series`` (label, x, y) as polylines.

    Points outside ``ylim`` are clamped to the frame edge, so a diverging
    trace visibly leaves the plot range without rescaling the axes.
    """
    if not series:
        raise ValueError("nothing to plot")
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    x_lo, x_hi = float(np.min(xs)), float(np.max(xs))
    if ylim is None:
        ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
        ys = ys[np.isfinite(ys)]
        y_lo, y_hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
        pad = 0.05 * (y_hi - y_lo) or 0.5
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        y_lo, y_hi = ylim
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    left, right, top, bottom = 70, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        y = np.clip(np.nan_to_num(y, nan=y_hi, posinf=y_hi, neginf=y_lo), y_lo, y_hi)
        return top + (y_hi - y) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x_lo, x_hi):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        y = float(sy(t))
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, x, y) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        px = sx(np.asarray(x, dtype=float))
        py = sy(np.asarray(y, dtype=float))
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = top + 14 + 14 * k
        out.append(f'<line x1="{left + pw - 150}" y1="{ly - 4}" x2="{left + pw - 130}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 125}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
