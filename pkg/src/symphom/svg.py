"""Minimal hand-written SVG plots with fixed number formatting (byte-stable)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

__all__ = ["line_plot", "diagram_plot"]

W, H, PAD = 480, 360, 48


def _f(x: float) -> str:
    return f"{x:.2f}"


def _range(vals):
    vals = [v for v in vals if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, xr, yr):
        self.xr, self.yr = xr, yr

    def x(self, v):
        return PAD + (v - self.xr[0]) / (self.xr[1] - self.xr[0]) * (W - 2 * PAD)

    def y(self, v):
        return H - PAD - (v - self.yr[0]) / (self.yr[1] - self.yr[0]) * (H - 2 * PAD)


def _header(title, xlabel, ylabel, fr):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{W // 2}" y="{H - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
           f'<text x="14" y="{H // 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 14 {H // 2})">{escape(ylabel)}</text>',
           f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>']
    for v, anchor in ((fr.xr[0], "start"), (fr.xr[1], "end")):
        out.append(f'<text x="{_f(fr.x(v))}" y="{H - PAD + 14}" text-anchor="{anchor}" font-size="10">'
                   f'{v:.3g}</text>')
    for v in fr.yr:
        out.append(f'<text x="{PAD - 4}" y="{_f(fr.y(v))}" text-anchor="end" font-size="10">{v:.3g}</text>')
    return out


def line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """``series``: list of (label, xs, ys)."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    fr = _Frame(_range(xs_all), _range(ys_all))
    out = _header(title, xlabel, ylabel, fr)
    colors = ("#1f4e9c", "#b03a2e", "#1e8449", "#7d3c98")
    for i, (label, xs, ys) in enumerate(series):
        c = colors[i % len(colors)]
        pts = " ".join(f"{_f(fr.x(x))},{_f(fr.y(y))}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        for x, y in zip(xs, ys):
            if math.isfinite(y):
                out.append(f'<circle cx="{_f(fr.x(x))}" cy="{_f(fr.y(y))}" r="2.5" fill="{c}"/>')
        out.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 + 14 * i}" text-anchor="end" font-size="11" '
                   f'fill="{c}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def diagram_plot(bars, title: str = "persistence diagram") -> str:
    """Birth/death scatter; essential classes are drawn on a top strip."""
    fin = [(d, b, e) for d, b, e in bars if math.isfinite(e)]
    ess = [(d, b) for d, b, e in bars if not math.isfinite(e)]
    vals = [b for _, b, _ in fin] + [e for _, _, e in fin] + [b for _, b in ess]
    r = _range(vals)
    fr = _Frame(r, r)
    out = _header(title, "birth", "death", fr)
    out.append(f'<line x1="{_f(fr.x(r[0]))}" y1="{_f(fr.y(r[0]))}" x2="{_f(fr.x(r[1]))}" y2="{_f(fr.y(r[1]))}" '
               f'stroke="gray" stroke-dasharray="4 3"/>')
    colors = ("#1f4e9c", "#b03a2e", "#1e8449", "#7d3c98", "#ca6f1e")
    for d, b, e in sorted(fin):
        out.append(f'<circle cx="{_f(fr.x(b))}" cy="{_f(fr.y(e))}" r="2" fill="{colors[int(d) % 5]}"/>')
    for d, b in sorted(ess):
        out.append(f'<rect x="{_f(fr.x(b) - 3)}" y="{PAD + 2}" width="6" height="6" fill="{colors[int(d) % 5]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
