"""Minimal SVG line chart of a kappa sweep (p-value and A_n against kappa)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from memv.sweep import SweepCurve

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 70, 30, 50


def _polyline(xs, ys, sx, sy, color, dash=""):
    segments, current = [], []
    for x, y in zip(xs, ys):
        if math.isfinite(y):
            current.append(f"{sx(x):.2f},{sy(y):.2f}")
        elif current:
            segments.append(current)
            current = []
    if current:
        segments.append(current)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return [
        f'<polyline fill="none" stroke="{color}" stroke-width="1.8"{extra} points="{" ".join(s)}"/>'
        for s in segments
    ]


def sweep_svg(curve: SweepCurve, title: str = "MEM-V test over kappa") -> str:
    ks = curve.kappas.tolist()
    ps = curve.p_values.tolist()
    an = curve.A_n.tolist()
    k_lo, k_hi = ks[0], ks[-1] if ks[-1] > ks[0] else ks[0] + 1.0
    finite_a = [a for a in an if math.isfinite(a)] or [0.0]
    a_lo, a_hi = min(min(finite_a), 0.0), max(max(finite_a), 0.0)
    if a_hi == a_lo:
        a_hi = a_lo + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(k):
        return LEFT + (k - k_lo) / (k_hi - k_lo) * pw

    def sy_p(p):
        return TOP + (1.0 - p) * ph

    def sy_a(a):
        return TOP + (a_hi - a) / (a_hi - a_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(6):
        k = k_lo + i * (k_hi - k_lo) / 5
        out.append(f'<text x="{sx(k):.2f}" y="{TOP + ph + 16}" text-anchor="middle">{k:.2f}</text>')
        p = i / 5
        out.append(f'<text x="{LEFT - 6}" y="{sy_p(p) + 4:.2f}" text-anchor="end">{p:.1f}</text>')
        a = a_lo + i * (a_hi - a_lo) / 5
        out.append(f'<text x="{LEFT + pw + 6}" y="{sy_a(a) + 4:.2f}">{a:.3g}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">kappa</text>')
    out.append(f'<text x="14" y="{TOP + ph / 2}" transform="rotate(-90 14 {TOP + ph / 2})" '
               f'text-anchor="middle" fill="#1f77b4">p-value</text>')
    out.append(f'<text x="{WIDTH - 10}" y="{TOP + ph / 2}" transform="rotate(90 {WIDTH - 10} {TOP + ph / 2})" '
               f'text-anchor="middle" fill="#d62728">A_n</text>')

    for lo, hi in curve.reject_intervals:
        x0, x1 = sx(lo), sx(hi)
        out.append(f'<rect x="{x0:.2f}" y="{TOP + ph - 6}" width="{max(x1 - x0, 2):.2f}" height="6" fill="#999"/>')
    out.append(f'<line x1="{LEFT}" x2="{LEFT + pw}" y1="{sy_p(curve.alpha):.2f}" y2="{sy_p(curve.alpha):.2f}" '
               f'stroke="#1f77b4" stroke-dasharray="4 3"/>')
    out.append(f'<line x1="{LEFT}" x2="{LEFT + pw}" y1="{sy_a(0.0):.2f}" y2="{sy_a(0.0):.2f}" '
               f'stroke="#d62728" stroke-dasharray="1 3"/>')
    out += _polyline(ks, ps, sx, sy_p, "#1f77b4")
    out += _polyline(ks, an, sx, sy_a, "#d62728")
    out.append("</svg>")
    return "\n".join(out) + "\n"
