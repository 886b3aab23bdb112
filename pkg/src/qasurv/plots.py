"""Minimal SVG rendering of survival curves and importance bars."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .survival import KaplanMeierCurve

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=60, right=20, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _step_points(times, values, x, y, t_max) -> str:
    pts = [(0.0, 1.0)]
    prev = 1.0
    for t, v in zip(times, values):
        pts.append((float(t), prev))
        pts.append((float(t), float(v)))
        prev = float(v)
    pts.append((t_max, prev))
    return " ".join(f"{x(a):.2f},{y(b):.2f}" for a, b in pts)


def km_svg(curves: Sequence[tuple[str, KaplanMeierCurve]], title: str = "", t_max: float | None = None) -> str:
    """Step curves with shaded confidence bands; x axis in months."""
    if t_max is None:
        ends = [float(c.event_times[-1]) for _, c in curves if len(c.event_times)]
        t_max = max(ends) if ends else 1.0
    t_max = max(t_max, 1.0)
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def x(t):
        return MARGIN["left"] + plot_w * t / t_max

    def y(s):
        return MARGIN["top"] + plot_h * (1.0 - s)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    x0, y0, y1 = MARGIN["left"], y(0.0), y(1.0)
    out.append(f'<line x1="{x0}" y1="{y0:.2f}" x2="{x(t_max):.2f}" y2="{y0:.2f}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{y0:.2f}" x2="{x0}" y2="{y1:.2f}" stroke="black"/>')
    for tick in np.linspace(0.0, 1.0, 6):
        out.append(
            f'<text x="{x0 - 6}" y="{y(tick) + 4:.2f}" text-anchor="end" font-size="11">{tick:.1f}</text>'
        )
    for tick in np.linspace(0.0, t_max, 6):
        out.append(
            f'<text x="{x(tick):.2f}" y="{y0 + 16:.2f}" text-anchor="middle" font-size="11">{tick:.0f}</text>'
        )
    out.append(
        f'<text x="{x(t_max / 2):.2f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">months</text>'
    )

    for i, (label, curve) in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        if curve.ci_lower is not None and len(curve.event_times):
            upper = _step_points(curve.event_times, curve.ci_upper, x, y, t_max).split()
            lower = _step_points(curve.event_times, curve.ci_lower, x, y, t_max).split()
            band = " ".join(upper + lower[::-1])
            out.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = _step_points(curve.event_times, curve.survival, x, y, t_max)
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 16 + 16 * i
        out.append(f'<rect x="{WIDTH - 170}" y="{ly - 9}" width="12" height="10" fill="{color}"/>')
        out.append(f'<text x="{WIDTH - 152}" y="{ly}" font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def importance_svg(names: Sequence[str], means, stds, title: str = "") -> str:
    """Horizontal bars with one-standard-deviation whiskers."""
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    lo = min(0.0, float(np.min(means - stds))) if len(means) else 0.0
    hi = max(0.0, float(np.max(means + stds))) if len(means) else 1.0
    if hi == lo:
        hi = lo + 1.0
    row_h = 24
    height = MARGIN["top"] + MARGIN["bottom"] + row_h * len(names)
    plot_w = WIDTH - 160 - MARGIN["right"]

    def x(v):
        return 160 + plot_w * (v - lo) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}">',
        f'<rect width="{WIDTH}" height="{height}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{x(0):.2f}" y1="{MARGIN["top"]}" x2="{x(0):.2f}" '
        f'y2="{height - MARGIN["bottom"]}" stroke="black"/>',
    ]
    for i, (name, m, s) in enumerate(zip(names, means, stds)):
        top = MARGIN["top"] + row_h * i + 4
        a, b = sorted((x(0.0), x(m)))
        out.append(f'<rect x="{a:.2f}" y="{top}" width="{b - a:.2f}" height="{row_h - 8}" fill="{COLORS[0]}"/>')
        mid = top + (row_h - 8) / 2
        out.append(
            f'<line x1="{x(m - s):.2f}" y1="{mid:.2f}" x2="{x(m + s):.2f}" y2="{mid:.2f}" stroke="black"/>'
        )
        out.append(f'<text x="150" y="{mid + 4:.2f}" text-anchor="end" font-size="12">{escape(name)}</text>')
    out.append(
        f'<text x="{x((lo + hi) / 2):.2f}" y="{height - 14}" text-anchor="middle" font-size="12">'
        "increase in OOB error</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
