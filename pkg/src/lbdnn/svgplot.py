"""Minimal native SVG emission: polyline plots and grid heatmaps.

Kept dependency-free and byte-deterministic (fixed float formatting) so
that identical data always produces identical files.
"""

from __future__ import annotations

import numpy as np

__all__ = ["line_plot", "heatmap"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#17becf", "#7f7f7f"]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 6):
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        return [lo]
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


def line_plot(path, x, series, title: str = "", xlabel: str = "",
              ylabel: str = "", width: int = 860, height: int = 480) -> None:
    """Write a polyline plot; ``series`` is a list of (label, y-array)."""
    x = np.asarray(x, dtype=float)
    ys = [(str(lbl), np.asarray(y, dtype=float)) for lbl, y in series]
    ml, mr, mt, mb = 64, 150, 36, 46
    pw, ph = width - ml - mr, height - mt - mb
    finite = np.concatenate([y[np.isfinite(y)] for _, y in ys]) if ys else np.array([0.0])
    ylo = float(finite.min()) if finite.size else 0.0
    yhi = float(finite.max()) if finite.size else 1.0
    if yhi <= ylo:
        yhi = ylo + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if xhi <= xlo:
        xhi = xlo + 1.0

    def px(v):
        return ml + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return mt + ph - (v - ylo) / (yhi - ylo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + pw / 2:.1f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    # axes and ticks
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                 'fill="none" stroke="#333" stroke-width="1"/>')
    for tv in _ticks(xlo, xhi):
        xp = px(tv)
        parts.append(f'<line x1="{xp:.1f}" y1="{mt + ph}" x2="{xp:.1f}" '
                     f'y2="{mt + ph + 5}" stroke="#333"/>')
        parts.append(f'<text x="{xp:.1f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_fmt(tv)}</text>')
    for tv in _ticks(ylo, yhi):
        yp = py(tv)
        parts.append(f'<line x1="{ml - 5}" y1="{yp:.1f}" x2="{ml}" y2="{yp:.1f}" '
                     'stroke="#333"/>')
        parts.append(f'<text x="{ml - 8}" y="{yp + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_fmt(tv)}</text>')
        parts.append(f'<line x1="{ml}" y1="{yp:.1f}" x2="{ml + pw}" y2="{yp:.1f}" '
                     'stroke="#ddd" stroke-width="0.5"/>')
    if xlabel:
        parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13" '
                     f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')
    # series
    for k, (label, y) in enumerate(ys):
        color = _PALETTE[k % len(_PALETTE)]
        pts = []
        for xv, yv in zip(x, y):
            if np.isfinite(yv):
                pts.append(f"{px(xv):.2f},{py(yv):.2f}")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.2"/>')
        ly = mt + 16 + 18 * k
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 34}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 40}" y="{ly}" font-family="sans-serif" '
                     f'font-size="12">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def _color(v: float, lo: float, hi: float) -> str:
    """Blue-to-red map; NaN renders gray."""
    if not np.isfinite(v):
        return "#bbbbbb"
    t = 0.0 if hi <= lo else (v - lo) / (hi - lo)
    t = min(1.0, max(0.0, t))
    r = int(40 + 215 * t)
    g = int(60 + 60 * (1 - abs(2 * t - 1)))
    b = int(255 - 215 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(path, values, row_labels, col_labels, title: str = "",
            xlabel: str = "", ylabel: str = "", cell: int = 86) -> None:
    """Write an annotated grid heatmap; NaN cells are gray ('diverged')."""
    values = np.asarray(values, dtype=float)
    nr, nc = values.shape
    ml, mt = 96, 56
    width = ml + nc * cell + 40
    height = mt + nr * cell + 60
    finite = values[np.isfinite(values)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + nc * cell / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    for i in range(nr):
        for j in range(nc):
            v = values[i, j]
            xp, yp = ml + j * cell, mt + i * cell
            parts.append(f'<rect x="{xp}" y="{yp}" width="{cell}" height="{cell}" '
                         f'fill="{_color(v, lo, hi)}" stroke="white"/>')
            label = "div" if not np.isfinite(v) else _fmt(v)
            parts.append(f'<text x="{xp + cell / 2:.1f}" y="{yp + cell / 2 + 4:.1f}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="12" fill="white">{label}</text>')
    for i, rl in enumerate(row_labels):
        parts.append(f'<text x="{ml - 8}" y="{mt + i * cell + cell / 2 + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12">{rl}</text>')
    for j, cl in enumerate(col_labels):
        parts.append(f'<text x="{ml + j * cell + cell / 2:.1f}" y="{mt + nr * cell + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="12">{cl}</text>')
    if xlabel:
        parts.append(f'<text x="{ml + nc * cell / 2:.1f}" y="{height - 12}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="13">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="20" y="{mt + nr * cell / 2:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13" '
                     f'transform="rotate(-90 20 {mt + nr * cell / 2:.1f})">{ylabel}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
