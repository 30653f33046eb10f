"""CSV and static SVG report files. Output bytes depend only on the inputs."""
from __future__ import annotations

import os
from xml.sax.saxutils import escape

import numpy as np

from .evaluation import StatsError, write_correlation_csv

W, H, PAD = 480, 360, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _scale(v, lo, hi, a, b):
    if hi == lo:
        return 0.5 * (a + b)
    return a + (v - lo) / (hi - lo) * (b - a)


def _axes(title, xlabel, ylabel, xlim, ylim):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
    ]
    for v, anchor, x, y in ((xlim[0], "start", PAD, H - PAD + 16), (xlim[1], "end", W - PAD, H - PAD + 16)):
        parts.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.4g}</text>')
    for v, y in ((ylim[0], H - PAD), (ylim[1], PAD + 4)):
        parts.append(f'<text x="{PAD - 4}" y="{y}" text-anchor="end" font-size="10">{v:.4g}</text>')
    return parts


def _limits(v):
    v = np.asarray(v, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def scatter_svg(series: dict, path, title="", xlabel="", ylabel="") -> None:
    """``series`` maps a label to (xs, ys); one circle per point."""
    if not series or not any(len(xs) for xs, _ in series.values()):
        raise StatsError("nothing to report")
    allx = np.concatenate([np.asarray(xs, float) for xs, _ in series.values()])
    ally = np.concatenate([np.asarray(ys, float) for _, ys in series.values()])
    xlim, ylim = _limits(allx), _limits(ally)
    parts = _axes(title, xlabel, ylabel, xlim, ylim)
    for i, (label, (xs, ys)) in enumerate(series.items()):
        c = COLORS[i % len(COLORS)]
        parts.append(f'<g class="series" data-label="{escape(str(label))}">')
        for x, y in zip(xs, ys):
            px = _scale(x, *xlim, PAD, W - PAD)
            py = _scale(y, *ylim, H - PAD, PAD)
            parts.append(f'<circle class="marker" cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{c}"/>')
        parts.append("</g>")
        parts.append(f'<text x="{W - PAD}" y="{PAD + 14 * i}" text-anchor="end" font-size="10" fill="{c}">{escape(str(label))}</text>')
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def line_svg(series: dict, path, title="", xlabel="", ylabel="") -> None:
    """``series`` maps a label to a sequence of y values at x = 0, 1, ..."""
    if not series or not any(len(v) for v in series.values()):
        raise StatsError("nothing to report")
    n = max(len(v) for v in series.values())
    ally = np.concatenate([np.asarray(v, float) for v in series.values()])
    xlim, ylim = (0.0, float(max(n - 1, 1))), _limits(ally)
    parts = _axes(title, xlabel, ylabel, xlim, ylim)
    for i, (label, ys) in enumerate(series.items()):
        c = COLORS[i % len(COLORS)]
        pts = " ".join(f"{_scale(x, *xlim, PAD, W - PAD):.2f},{_scale(y, *ylim, H - PAD, PAD):.2f}"
                       for x, y in enumerate(ys))
        parts.append(f'<polyline class="line" data-label="{escape(str(label))}" points="{pts}" fill="none" stroke="{c}"/>')
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def emit_report(results, out_dir, tables=None, stem="report") -> list[str]:
    """Write ``<stem>.csv`` (one row per correlation) and, given the two
    score tables, a scatter plot with one marker per (item, system) score.
    """
    if not results:
        raise StatsError("nothing to report")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    write_correlation_csv(results, csv_path)
    written = [csv_path]
    if tables is not None:
        a, b = tables
        series = {}
        shared_items = [i for i in a.items if i in b.items]
        for s in a.systems:
            if s in b.systems:
                xs = [a.values[a.items.index(i), a.systems.index(s)] for i in shared_items]
                ys = [b.values[b.items.index(i), b.systems.index(s)] for i in shared_items]
                series[s] = (xs, ys)
        svg_path = os.path.join(out_dir, f"{stem}_scatter.svg")
        scatter_svg(series, svg_path, title=f"{results[0].method} correlation", xlabel="a", ylabel="b")
        written.append(svg_path)
    return written
