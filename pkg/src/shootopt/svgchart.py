"""Minimal self-contained SVG line charts (no plotting dependency)."""

from __future__ import annotations

import math

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 160, 40, 55


def _log_ticks(lo: float, hi: float):
    first = math.floor(math.log10(lo))
    last = math.ceil(math.log10(hi))
    return [10.0**e for e in range(first, last + 1)]


def line_chart_svg(series: dict, x_label: str, y_label: str, title: str) -> str:
    """Log-log line chart; ``series`` maps a label to [(x, y), ...] points.

    Non-positive y values are clamped to a decade below the smallest
    positive value so exact-to-roundoff series remain visible.
    """
    all_x = [x for pts in series.values() for x, _ in pts]
    all_y = [y for pts in series.values() for _, y in pts if y > 0]
    if not all_x:
        raise ValueError("no data points to plot")
    y_floor = (min(all_y) if all_y else 1.0) / 10.0
    clamped = {
        label: [(x, y if y > 0 else y_floor) for x, y in pts]
        for label, pts in series.items()
    }
    all_y = [y for pts in clamped.values() for _, y in pts]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo / 2, x_hi * 2
    if y_lo == y_hi:
        y_lo, y_hi = y_lo / 2, y_hi * 2

    def sx(x):
        t = (math.log10(x) - math.log10(x_lo)) / (math.log10(x_hi) - math.log10(x_lo))
        return _ML + t * (_W - _ML - _MR)

    def sy(y):
        t = (math.log10(y) - math.log10(y_lo)) / (math.log10(y_hi) - math.log10(y_lo))
        return _H - _MB - t * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" '
        f'font-size="15">{title}</text>',
    ]
    axis = (
        f'<path d="M {_ML} {_MT} V {_H - _MB} H {_W - _MR}" fill="none" '
        f'stroke="black" stroke-width="1"/>'
    )
    parts.append(axis)
    for xv in _log_ticks(x_lo, x_hi):
        if not x_lo <= xv <= x_hi:
            continue
        parts.append(
            f'<line x1="{sx(xv):.1f}" y1="{_H - _MB}" x2="{sx(xv):.1f}" '
            f'y2="{_H - _MB + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{_H - _MB + 18}" '
            f'text-anchor="middle">{xv:g}</text>'
        )
    for yv in _log_ticks(y_lo, y_hi):
        if not y_lo <= yv <= y_hi:
            continue
        parts.append(
            f'<line x1="{_ML - 5}" y1="{sy(yv):.1f}" x2="{_ML}" '
            f'y2="{sy(yv):.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{sy(yv) + 4:.1f}" '
            f'text-anchor="end">{yv:.0e}</text>'
        )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 12}" '
        f'text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="18" y="{(_MT + _H - _MB) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(_MT + _H - _MB) / 2:.1f})">{y_label}</text>'
    )
    for idx, (label, pts) in enumerate(clamped.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in sorted(pts))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        for x, y in pts:
            parts.append(
                f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>'
            )
        ly = _MT + 18 * idx + 10
        parts.append(
            f'<line x1="{_W - _MR + 10}" y1="{ly}" x2="{_W - _MR + 34}" '
            f'y2="{ly}" stroke="{color}" stroke-width="1.8"/>'
        )
        parts.append(f'<text x="{_W - _MR + 40}" y="{ly + 4}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
