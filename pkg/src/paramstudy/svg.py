"""Dependency-free SVG charts: sample scatter + fitted curve, and
component bar charts.  Output is deterministic for fixed input."""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = 64


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, count))


def _header() -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n')


def _axes(x_label: str, y_label: str, xlo, xhi, ylo, yhi,
          to_px) -> list[str]:
    parts = []
    x0, y0 = MARGIN, HEIGHT - MARGIN
    x1, y1 = WIDTH - MARGIN, MARGIN
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" '
                 f'stroke="black"/>')
    for t in _ticks(xlo, xhi):
        px, _ = to_px(t, ylo)
        parts.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" '
                     f'y2="{y0 + 5}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{y0 + 20}" font-size="11" '
                     f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        _, py = to_px(xlo, t)
        parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" '
                     f'y2="{_fmt(py)}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{_fmt(py + 4)}" font-size="11" '
                     f'text-anchor="end">{_fmt(t)}</text>')
    parts.append(f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 16}" '
                 f'font-size="13" text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="16" y="{(y0 + y1) // 2}" font-size="13" '
                 f'text-anchor="middle" '
                 f'transform="rotate(-90 16 {(y0 + y1) // 2})">{y_label}</text>')
    return parts


def scatter_curve_svg(points: np.ndarray, curve: np.ndarray,
                      x_label: str, y_label: str) -> str:
    """Scatter markers for samples plus a polyline for the fitted curve."""
    points = np.asarray(points, dtype=float)
    curve = np.asarray(curve, dtype=float)
    allx = np.concatenate([points[:, 0], curve[:, 0]])
    ally = np.concatenate([points[:, 1], curve[:, 1]])
    xlo, xhi = float(allx.min()), float(allx.max())
    ylo, yhi = float(ally.min()), float(ally.max())
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5

    def to_px(x, y):
        px = MARGIN + (x - xlo) / (xhi - xlo) * (WIDTH - 2 * MARGIN)
        py = HEIGHT - MARGIN - (y - ylo) / (yhi - ylo) * (HEIGHT - 2 * MARGIN)
        return px, py

    parts = [_header()]
    parts += _axes(x_label, y_label, xlo, xhi, ylo, yhi, to_px)
    pts = " ".join(f"{_fmt(to_px(x, y)[0])},{_fmt(to_px(x, y)[1])}"
                   for x, y in curve)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" '
                 f'stroke-width="2"/>')
    for x, y in points:
        px, py = to_px(x, y)
        parts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="4" '
                     f'fill="crimson"/>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def bars_svg(bars: list[tuple[str, float]], y_label: str) -> str:
    """Bar chart of signed direction components, one rect per parameter."""
    n = len(bars)
    span = WIDTH - 2 * MARGIN
    slot = span / max(n, 1)
    top, bottom = 1.0, -1.0
    zero_y = MARGIN + (top - 0.0) / (top - bottom) * (HEIGHT - 2 * MARGIN)

    def ypx(v: float) -> float:
        return MARGIN + (top - v) / (top - bottom) * (HEIGHT - 2 * MARGIN)

    parts = [_header()]
    parts.append(f'<line x1="{MARGIN}" y1="{_fmt(zero_y)}" '
                 f'x2="{WIDTH - MARGIN}" y2="{_fmt(zero_y)}" stroke="black"/>')
    for t in (-1.0, -0.5, 0.0, 0.5, 1.0):
        parts.append(f'<text x="{MARGIN - 8}" y="{_fmt(ypx(t) + 4)}" '
                     f'font-size="11" text-anchor="end">{_fmt(t)}</text>')
    for i, (name, value) in enumerate(bars):
        x = MARGIN + i * slot + 0.2 * slot
        w = 0.6 * slot
        y = ypx(max(value, 0.0))
        h = abs(ypx(0.0) - ypx(abs(value)))
        parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
                     f'height="{_fmt(h)}" fill="steelblue"/>')
        parts.append(f'<text x="{_fmt(x + w / 2)}" y="{HEIGHT - MARGIN + 20}" '
                     f'font-size="11" text-anchor="middle">{name}</text>')
    parts.append(f'<text x="{WIDTH // 2}" y="{MARGIN - 20}" font-size="13" '
                 f'text-anchor="middle">{y_label}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)
