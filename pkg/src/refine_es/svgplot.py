"""Minimal native SVG line plots (no plotting dependency). CSVs carry the
same data for anyone who wants to replot properly."""

from __future__ import annotations

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 60, 20, 40, 50


def _scale(vals, lo, hi, out_lo, out_hi):
    if hi - lo < 1e-12:
        hi = lo + 1.0
    return out_lo + (np.asarray(vals, dtype=float) - lo) * (out_hi - out_lo) / (hi - lo)


def write_line_svg(path: str, series: dict, title: str = "",
                   xlabel: str = "", ylabel: str = "") -> None:
    """series: name -> (x, y) arrays."""
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<text x="{_W / 2}" y="{_H - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{_H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2})">{ylabel}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="#888"/>',
    ]
    # axis extrema labels
    parts.append(f'<text x="{_ML}" y="{_H - _MB + 16}" font-size="11">{x0:.4g}</text>')
    parts.append(f'<text x="{_W - _MR}" y="{_H - _MB + 16}" text-anchor="end" '
                 f'font-size="11">{x1:.4g}</text>')
    parts.append(f'<text x="{_ML - 4}" y="{_H - _MB}" text-anchor="end" '
                 f'font-size="11">{y0:.4g}</text>')
    parts.append(f'<text x="{_ML - 4}" y="{_MT + 12}" text-anchor="end" '
                 f'font-size="11">{y1:.4g}</text>')
    for k, (name, (x, y)) in enumerate(series.items()):
        px = _scale(x, x0, x1, _ML, _W - _MR)
        py = _scale(y, y0, y1, _H - _MB, _MT)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        color = _COLORS[k % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _MR - 6}" y="{_MT + 16 + 14 * k}" '
                     f'text-anchor="end" font-size="12" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
