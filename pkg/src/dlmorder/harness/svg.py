"""Static SVG 1.1 scatter charts built from report rows."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from ..errors import InvalidInput

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 190, 40, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#7f7f7f")


def _numeric(rows: Sequence[dict], field: str) -> list[float]:
    out = []
    for i, row in enumerate(rows):
        if field not in row:
            raise InvalidInput(f"row {i} has no field {field!r}")
        try:
            v = float(row[field])
        except (TypeError, ValueError):
            raise InvalidInput(f"row {i}: field {field!r} is not numeric") from None
        if not math.isfinite(v):
            raise InvalidInput(f"row {i}: field {field!r} is not finite")
        out.append(v)
    return out


def _span(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def svg_scatter(rows: Sequence[dict], x_field: str, y_field: str, label_field: str = "sampler",
                title: str | None = None) -> str:
    """Render one labelled marker per row; identical input gives identical bytes."""
    if not rows:
        raise InvalidInput("no rows to plot")
    xs, ys = _numeric(rows, x_field), _numeric(rows, y_field)
    x0, x1 = _span(xs)
    y0, y1 = _span(ys)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{LEFT + pw / 2:.2f}" y="22" text-anchor="middle" font-size="14">'
        f'{escape(title or f"{y_field} vs {x_field}")}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for t in range(5):
        xv = x0 + (x1 - x0) * t / 4
        yv = y0 + (y1 - y0) * t / 4
        gx, gy = px(xv), py(yv)
        out.append(f'<line x1="{gx:.2f}" y1="{TOP + ph}" x2="{gx:.2f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{gx:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<line x1="{LEFT - 5}" y1="{gy:.2f}" x2="{LEFT}" y2="{gy:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{gy + 4:.2f}" text-anchor="end">{yv:.4g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(x_field)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.2f})">{escape(y_field)}</text>')
    for i, (row, x, y) in enumerate(zip(rows, xs, ys)):
        color = PALETTE[i % len(PALETTE)]
        label = escape(str(row.get(label_field, i)))
        out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="5" fill="{color}">'
                   f'<title>{label}</title></circle>')
        ly = TOP + 10 + 16 * i
        out.append(f'<circle cx="{WIDTH - RIGHT + 15}" cy="{ly}" r="4" fill="{color}"/>')
        out.append(f'<text x="{WIDTH - RIGHT + 24}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_scatter(rows: Sequence[dict], x_field: str, y_field: str, path, label_field: str = "sampler",
                     title: str | None = None) -> Path:
    text = svg_scatter(rows, x_field, y_field, label_field, title)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
