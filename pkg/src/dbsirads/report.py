"""CSV tables and self-contained SVG line/bar charts."""

from __future__ import annotations

import csv
import json
import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

W, H = 640, 420
ML, MR, MT, MB = 70, 150, 40, 55


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt_cell(v) for v in r])


def _fmt_cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_plain(v) for v in o.tolist()]
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return o


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi, ylog=False):
    pw, ph = W - ML - MR, H - MT - MB
    # a single point or a flat series still needs a non-empty axis
    if xhi <= xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi <= ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5

    def sx(x):
        return ML + (x - xlo) / (xhi - xlo) * pw

    def sy(y):
        if ylog:
            y = math.log10(max(y, 10 ** ylo))
        return MT + ph - (y - ylo) / (yhi - ylo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{ML + pw / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MT + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(xlo, xhi):
        x = sx(t)
        parts.append(f'<line x1="{x:.1f}" y1="{MT + ph}" x2="{x:.1f}" y2="{MT + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{MT + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(ylo, yhi):
        y = MT + ph - (t - ylo) / (yhi - ylo) * ph
        lab = f"1e{t:g}" if ylog else f"{t:g}"
        parts.append(f'<line x1="{ML - 5}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{ML - 8}" y="{y + 4:.1f}" text-anchor="end">{lab}</text>')
    return parts, sx, sy


def _legend(parts, labels):
    for i, lab in enumerate(labels):
        y = MT + 14 + 18 * i
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{W - MR + 12}" y="{y - 9}" width="12" height="10" fill="{c}"/>')
        parts.append(f'<text x="{W - MR + 30}" y="{y}">{escape(lab)}</text>')


def line_chart(path, series, title, xlabel, ylabel, ylog=False):
    """``series`` is a list of (label, x, y); writes one SVG file."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    if ylog:
        pos = ys[ys > 0]
        ylo = math.floor(math.log10(pos.min())) if pos.size else -3
        yhi = math.ceil(math.log10(pos.max())) if pos.size else 0
        ylo = max(ylo, yhi - 6)
    else:
        ylo, yhi = float(min(ys.min(), 0.0)), float(ys.max())
    parts, sx, sy = _frame(title, xlabel, ylabel, float(xs.min()), float(xs.max()), ylo, yhi, ylog)
    for i, (_, x, y) in enumerate(series):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y) if not ylog or b > 0)
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.8"/>')
        for a, b in zip(x, y):
            if not ylog or b > 0:
                parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.2" fill="{c}"/>')
    _legend(parts, [s[0] for s in series])
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def bar_chart(path, groups, title, xlabel, ylabel):
    """``groups`` is a list of (label, x, heights); bars share one x axis."""
    xs = np.concatenate([np.asarray(g[1], float) for g in groups])
    hs = np.concatenate([np.asarray(g[2], float) for g in groups])
    uniq = np.unique(xs)
    dx = float(np.min(np.diff(uniq))) if uniq.size > 1 else 1.0
    xlo, xhi = float(xs.min()) - dx, float(xs.max()) + dx
    yhi = float(max(hs.max(initial=0.0), 1e-12))
    parts, sx, sy = _frame(title, xlabel, ylabel, xlo, xhi, 0.0, yhi)
    ng = len(groups)
    bw = (sx(dx) - sx(0.0)) * 0.8 / ng
    for i, (_, x, h) in enumerate(groups):
        c = PALETTE[i % len(PALETTE)]
        for a, b in zip(x, h):
            if b <= 0:
                continue
            left = sx(a) - 0.4 * ng * bw + i * bw
            parts.append(f'<rect x="{left:.2f}" y="{sy(b):.2f}" width="{bw:.2f}" '
                         f'height="{sy(0.0) - sy(b):.2f}" fill="{c}"/>')
    _legend(parts, [g[0] for g in groups])
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
