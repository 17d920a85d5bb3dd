"""A tiny SVG plot writer: axes, ticks, optional log axes, line and step series.

Plots are a convenience; the CSV files are the data contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#9467bd", "#2ca02c", "#ff7f0e", "#8c564b")
W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    step: bool = False


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        return [float(10.0**k) for k in range(int(np.floor(lo)), int(np.ceil(hi)) + 1) if lo <= k <= hi]
    span = hi - lo
    raw = span / 5 if span > 0 else 1.0
    step = 10 ** np.floor(np.log10(raw))
    for m in (1, 2, 5, 10):
        if raw <= m * step:
            step *= m
            break
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step / 2, step)]


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def plot(
    path: str | Path,
    series: list[Series],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    xlog: bool = False,
    ylog: bool = False,
) -> Path:
    def tx(v):
        return np.log10(v) if xlog else v

    def ty(v):
        return np.log10(v) if ylog else v

    xs, ys = [], []
    for s in series:
        x, y = np.asarray(s.x, float), np.asarray(s.y, float)
        keep = np.isfinite(x) & np.isfinite(y) & ((x > 0) if xlog else True) & ((y > 0) if ylog else True)
        xs.append(tx(x[keep]))
        ys.append(ty(y[keep]))
    allx = np.concatenate(xs) if xs else np.zeros(1)
    ally = np.concatenate(ys) if ys else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{LEFT + pw / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{TOP + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {TOP + ph / 2})">{escape(ylabel)}</text>',
    ]
    for v in _ticks(x0, x1, xlog):
        p = px(np.log10(v) if xlog else v)
        out.append(f'<line x1="{p:.1f}" y1="{TOP + ph}" x2="{p:.1f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{p:.1f}" y="{TOP + ph + 18}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(y0, y1, ylog):
        p = py(np.log10(v) if ylog else v)
        out.append(f'<line x1="{LEFT - 5}" y1="{p:.1f}" x2="{LEFT}" y2="{p:.1f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{p + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    for k, (s, x, y) in enumerate(zip(series, xs, ys)):
        color = COLORS[k % len(COLORS)]
        if s.step and len(x) > 1:
            # bars centred on x: duplicate points at the bin edges
            half = np.diff(x).mean() / 2
            xe = np.repeat(np.concatenate([x - half, [x[-1] + half]]), 2)[1:-1]
            ye = np.repeat(y, 2)
            x, y = xe, ye
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(
            f'<text x="{LEFT + pw - 8}" y="{TOP + 16 + 14 * k}" text-anchor="end" fill="{color}">{escape(s.label)}</text>'
        )
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path
