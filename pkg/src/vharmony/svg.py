"""Self-contained SVG box plots with significance brackets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .errors import EmptySamples

WIDTH_PER_BOX = 70
HEIGHT = 360
MARGIN = dict(left=60, right=20, top=50, bottom=70)


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    low: float   # whisker ends, Tukey 1.5 IQR rule clamped to the data
    high: float
    outliers: tuple[float, ...]
    n: int


def box_stats(values) -> BoxStats:
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        raise EmptySamples("cannot summarize an empty sample")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    out = x[(x < q1 - 1.5 * iqr) | (x > q3 + 1.5 * iqr)]
    return BoxStats(float(med), float(q1), float(q3), float(inside[0]), float(inside[-1]),
                    tuple(float(v) for v in out), int(x.size))


def significance_label(p: float) -> str:
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def boxplot_svg(
    samples: Sequence[tuple[str, Sequence[float]]],
    title: str = "",
    comparisons: Sequence[tuple[int, int, float]] = (),
    ylabel: str = "bits",
) -> str:
    """Render labelled sample sets as an SVG document string.

    ``comparisons`` holds ``(i, j, p)`` triples; each becomes a bracket
    between boxes i and j labelled **, * or ns.
    """
    if not samples:
        raise EmptySamples("no sample sets to plot")
    stats = [box_stats(v) for _, v in samples]
    lo = min(min(s.low, *s.outliers) if s.outliers else s.low for s in stats)
    hi = max(max(s.high, *s.outliers) if s.outliers else s.high for s in stats)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    bracket_room = 0.12 * (hi - lo) * len(comparisons)
    lo, hi = lo - pad, hi + pad + bracket_room

    width = MARGIN["left"] + MARGIN["right"] + WIDTH_PER_BOX * len(samples)
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def y(v: float) -> float:
        return MARGIN["top"] + (hi - v) / (hi - lo) * plot_h

    def cx(i: int) -> float:
        return MARGIN["left"] + WIDTH_PER_BOX * (i + 0.5)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{HEIGHT}" '
        f'viewBox="0 0 {width} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    # axis with five ticks
    x0 = MARGIN["left"]
    parts.append(f'<line x1="{x0}" y1="{y(hi):.2f}" x2="{x0}" y2="{y(lo):.2f}" stroke="black"/>')
    for v in np.linspace(lo, hi, 5):
        parts.append(f'<line x1="{x0 - 4}" y1="{y(v):.2f}" x2="{x0}" y2="{y(v):.2f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 6}" y="{y(v) + 4:.2f}" text-anchor="end">{_fmt(v)}</text>')
    parts.append(
        f'<text x="14" y="{MARGIN["top"] + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {MARGIN["top"] + plot_h / 2:.1f})">{escape(ylabel)}</text>'
    )
    if lo < 0 < hi:
        parts.append(f'<line x1="{x0}" y1="{y(0):.2f}" x2="{width - MARGIN["right"]}" y2="{y(0):.2f}" '
                     'stroke="#999" stroke-dasharray="3,3"/>')

    half = WIDTH_PER_BOX * 0.3
    for i, ((label, _), s) in enumerate(zip(samples, stats)):
        c = cx(i)
        parts.append(f'<g class="box" data-label={quoteattr(label)} data-n="{s.n}">')
        parts.append(f'<line x1="{c:.2f}" y1="{y(s.high):.2f}" x2="{c:.2f}" y2="{y(s.q3):.2f}" stroke="black"/>')
        parts.append(f'<line x1="{c:.2f}" y1="{y(s.q1):.2f}" x2="{c:.2f}" y2="{y(s.low):.2f}" stroke="black"/>')
        for w in (s.low, s.high):
            parts.append(f'<line x1="{c - half / 2:.2f}" y1="{y(w):.2f}" x2="{c + half / 2:.2f}" y2="{y(w):.2f}" stroke="black"/>')
        parts.append(
            f'<rect x="{c - half:.2f}" y="{y(s.q3):.2f}" width="{2 * half:.2f}" '
            f'height="{y(s.q1) - y(s.q3):.2f}" fill="#9ecae1" stroke="black"/>'
        )
        parts.append(f'<line class="median" x1="{c - half:.2f}" y1="{y(s.median):.2f}" '
                     f'x2="{c + half:.2f}" y2="{y(s.median):.2f}" stroke="black" stroke-width="2"/>')
        for v in s.outliers:
            parts.append(f'<circle cx="{c:.2f}" cy="{y(v):.2f}" r="2" fill="none" stroke="black"/>')
        parts.append('</g>')
        ty = HEIGHT - MARGIN["bottom"] + 14
        parts.append(f'<text x="{c:.2f}" y="{ty}" text-anchor="end" '
                     f'transform="rotate(-35 {c:.2f} {ty})">{escape(label)}</text>')

    top = max(s.high if not s.outliers else max(s.high, *s.outliers) for s in stats)
    step = 0.12 * (hi - lo - bracket_room) if comparisons else 0.0
    for k, (i, j, p) in enumerate(comparisons):
        if not (0 <= i < len(samples) and 0 <= j < len(samples)) or i == j:
            raise IndexError(f"comparison ({i}, {j}) does not name two distinct boxes")
        level = y(top + pad + step * (k + 0.5))
        x1, x2 = cx(i), cx(j)
        parts.append(
            f'<g class="bracket"><path d="M{x1:.2f},{level + 5:.2f} V{level:.2f} H{x2:.2f} V{level + 5:.2f}" '
            f'fill="none" stroke="black"/>'
            f'<text x="{(x1 + x2) / 2:.2f}" y="{level - 3:.2f}" text-anchor="middle">{significance_label(p)}</text></g>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
