"""Minimal standalone SVG line plots (no plotting dependency).

Just enough for the convergence figures: several series with optional
quantile bands, linear x axis, linear or log10 y axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    band: tuple | None = None  # (lo, hi) arrays


def _ticks_linear(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if raw <= m * mag:
            step = m * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _ticks_log(lo, hi):
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    return [10.0**e for e in range(lo_e, hi_e + 1)]


def _fmt_tick(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}".replace("e-0", "e-").replace("e+0", "e")
    return f"{v:g}"


def line_plot_svg(path, series, title="", xlabel="", ylabel="", log_y=False,
                  width=640, height=420) -> None:
    """Write a self-contained SVG line plot of the given series."""
    series = [s for s in series if len(s.x)]
    ml, mr, mt, mb = 62, 14, 30, 46
    pw, ph = width - ml - mr, height - mt - mb

    def finite_y(s):
        ys = [np.asarray(s.y, dtype=float)]
        if s.band is not None:
            ys += [np.asarray(s.band[0], dtype=float), np.asarray(s.band[1], dtype=float)]
        vals = np.concatenate(ys)
        vals = vals[np.isfinite(vals)]
        return vals[vals > 0] if log_y else vals

    all_x = np.concatenate([np.asarray(s.x, dtype=float) for s in series]) if series else np.array([0.0, 1.0])
    all_y = np.concatenate([finite_y(s) for s in series]) if series else np.array([1.0])
    if all_y.size == 0:
        all_y = np.array([1.0])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if log_y:
        y_lo, y_hi = y_lo / 1.5, y_hi * 1.5
    else:
        pad = 0.05 * (y_hi - y_lo or 1.0)
        y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        if log_y:
            t = (math.log10(v) - math.log10(y_lo)) / (math.log10(y_hi) - math.log10(y_lo))
        else:
            t = (v - y_lo) / (y_hi - y_lo)
        return mt + (1.0 - t) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica,Arial,sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + pw / 2:.1f}" y="16" text-anchor="middle" font-size="13">{title}</text>',
    ]

    y_ticks = _ticks_log(y_lo, y_hi) if log_y else _ticks_linear(y_lo, y_hi)
    for t in y_ticks:
        if not (y_lo <= t <= y_hi):
            continue
        y = sy(t)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 3.5:.1f}" text-anchor="end">{_fmt_tick(t)}</text>')
    for t in _ticks_linear(x_lo, x_hi):
        if not (x_lo <= t <= x_hi):
            continue
        x = sx(t)
        out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{mt + ph}" stroke="#eeeeee" stroke-width="1"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 16}" text-anchor="middle">{_fmt_tick(t)}</text>')

    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>'
    )

    def clean(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if log_y:
            ok &= y > 0
        return x[ok], y[ok]

    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        if s.band is not None:
            bx, blo = clean(s.x, s.band[0])
            bx2, bhi = clean(s.x, s.band[1])
            if len(bx) > 1 and np.array_equal(bx, bx2):
                pts = [f"{sx(v):.1f},{sy(w):.1f}" for v, w in zip(bx, blo)]
                pts += [f"{sx(v):.1f},{sy(w):.1f}" for v, w in zip(bx[::-1], bhi[::-1])]
                out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        px, py = clean(s.x, s.y)
        if len(px):
            pts = " ".join(f"{sx(v):.1f},{sy(w):.1f}" for v, w in zip(px, py))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        if s.label:
            ly = mt + 14 + 15 * i
            out.append(f'<line x1="{ml + pw - 120}" y1="{ly - 4}" x2="{ml + pw - 96}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{ml + pw - 90}" y="{ly}">{s.label}</text>')

    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
