"""Minimal SVG line plots with one-standard-deviation bands."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_plot_svg(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", logx: bool = False,
                  width: int = 640, height: int = 400) -> str:
    """``series`` maps a label to ``(x, mean, sd)``; ``sd`` may be None."""
    ml, mr, mt, mb = 70, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs, lo, hi = [], [], []
    for x, m, sd in series.values():
        x = np.asarray(x, dtype=float)
        m = np.asarray(m, dtype=float)
        s = np.zeros_like(m) if sd is None else np.asarray(sd, dtype=float)
        xs.append(np.log10(x) if logx else x)
        lo.append(m - s)
        hi.append(m + s)
    x0, x1 = min(v.min() for v in xs), max(v.max() for v in xs)
    y0, y1 = min(v.min() for v in lo), max(v.max() for v in hi)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        xv = x0 + (x1 - x0) * i / 4
        xl = 10 ** xv if logx else xv
        out.append(f'<text x="{ml - 6}" y="{py(yv) + 4:.1f}" text-anchor="end" font-size="11">{_fmt(yv)}</text>')
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle" font-size="11">{_fmt(xl)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    for k, ((name, (x, m, sd)), xv, l, h) in enumerate(zip(series.items(), xs, lo, hi)):
        col = PALETTE[k % len(PALETTE)]
        m = np.asarray(m, dtype=float)
        if sd is not None:
            pts = [(px(a), py(b)) for a, b in zip(xv, h)] + [(px(a), py(b)) for a, b in zip(xv[::-1], l[::-1])]
            out.append('<polygon points="' + " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
                       + f'" fill="{col}" fill-opacity="0.15" stroke="none"/>')
        line = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(xv, m) if math.isfinite(b))
        out.append(f'<polyline points="{line}" fill="none" stroke="{col}" stroke-width="2"/>')
        ly = mt + 14 + 18 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}" font-size="11">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, series: dict, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(line_plot_svg(series, **kw))
