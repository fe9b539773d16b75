"""Dependency-free SVG line plots with optional error bars."""

from __future__ import annotations

from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str
    yerr: Optional[Sequence[float]] = None
    dashed: bool = False


def line_plot(series: Sequence[Series], path, title: str = "", xlabel: str = "", ylabel: str = "",
              diagonal: bool = False, width: int = 640, height: int = 480) -> None:
    """Write curves (``<polyline class="curve">``) and an optional y = x reference line."""
    margin = 60
    xs = np.concatenate([np.asarray(s.x, dtype=float) for s in series])
    ys = [np.asarray(s.y, dtype=float) for s in series]
    lo_y = min(float(np.min(y - (np.asarray(s.yerr) if s.yerr is not None else 0))) for s, y in zip(series, ys))
    hi_y = max(float(np.max(y + (np.asarray(s.yerr) if s.yerr is not None else 0))) for s, y in zip(series, ys))
    x0, x1 = float(xs.min()), float(xs.max())
    if diagonal:
        lo_y, hi_y = min(lo_y, x0), max(hi_y, x1)
    if x1 == x0:
        x1 = x0 + 1.0
    if hi_y == lo_y:
        hi_y = lo_y + 1.0

    def px(v):
        return margin + (v - x0) / (x1 - x0) * (width - 2 * margin)

    def py(v):
        return height - margin - (v - lo_y) / (hi_y - lo_y) * (height - 2 * margin)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<g class="axes" stroke="black"><line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
           f'y2="{height - margin}"/><line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}"/></g>']
    for v, anchor in ((x0, "start"), (x1, "end")):
        out.append(f'<text x="{px(v):.2f}" y="{height - margin + 18}" font-size="12" text-anchor="{anchor}">{v:.3g}</text>')
    for v in (lo_y, hi_y):
        out.append(f'<text x="{margin - 6}" y="{py(v):.2f}" font-size="12" text-anchor="end">{v:.3g}</text>')
    if diagonal:
        a, b = max(x0, lo_y), min(x1, hi_y)
        out.append(f'<line class="reference" x1="{px(a):.2f}" y1="{py(a):.2f}" x2="{px(b):.2f}" y2="{py(b):.2f}" '
                   'stroke="gray" stroke-dasharray="4 4"/>')
    for i, (s, y) in enumerate(zip(series, ys)):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(np.asarray(s.x, dtype=float), y))
        dash = ' stroke-dasharray="6 3"' if s.dashed else ""
        out.append(f'<polyline class="curve" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}">'
                   f'<title>{escape(s.label)}</title></polyline>')
        if s.yerr is not None:
            bars = []
            for a, b, e in zip(np.asarray(s.x, dtype=float), y, np.asarray(s.yerr, dtype=float)):
                bars.append(f'<line x1="{px(a):.2f}" y1="{py(b - e):.2f}" x2="{px(a):.2f}" y2="{py(b + e):.2f}"/>')
            out.append(f'<g class="errorbars" stroke="{color}">' + "".join(bars) + "</g>")
        out.append(f'<text x="{width - margin - 150}" y="{margin + 16 * i}" font-size="12" fill="{color}">'
                   f'{escape(s.label)}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="{margin / 2}" font-size="14" text-anchor="middle">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{width / 2}" y="{height - 15}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="15" y="{height / 2}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 15 {height / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
