"""CSV tables and small self-contained SVG plots."""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_chunk_report(results, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["scheme", "user", "chunk", "reward", "normalized_reward", "missed_fov_tiles"])
        for name in results:
            for ep in results[name]:
                for o in ep.outcomes:
                    w.writerow([name, o.user, o.chunk, repr(o.reward), repr(o.normalized_reward),
                                o.missed_fov_tiles])


def write_aggregate(table, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["scheme", "user", "mean_reward"])
        for name, entry in table.items():
            for user, mean in entry["per_user"].items():
                w.writerow([name, user, repr(mean)])


def write_curve(curve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["iteration", "mean_reward"])
        for i, r in enumerate(curve, start=1):
            w.writerow([i, repr(float(r))])


def svg_plot(series: dict, path, title="", xlabel="", ylabel="", step=False,
             width=640, height=400) -> None:
    """Line (or step) plot of ``{label: [(x, y), ...]}`` written as one SVG file."""
    pad_l, pad_r, pad_t, pad_b = 60, 130, 30, 45
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("nothing to plot")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{escape(ylabel)}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{sx(xv):.1f}" y="{pad_t + ph + 15}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{pad_l - 5}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for i, (label, s) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        coords = []
        for k, (x, y) in enumerate(s):
            if step and k > 0:
                coords.append(f"{sx(x):.2f},{sy(s[k - 1][1]):.2f}")
            coords.append(f"{sx(x):.2f},{sy(y):.2f}")
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{" ".join(coords)}"/>')
        ly = pad_t + 14 * (i + 1)
        out.append(f'<line x1="{pad_l + pw + 10}" y1="{ly - 4}" x2="{pad_l + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l + pw + 35}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
