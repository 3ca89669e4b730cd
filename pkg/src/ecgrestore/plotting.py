"""Static SVG rendering of segment overlays with a companion value CSV.

The SVG is assembled from plain strings with fixed-precision coordinates,
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .ecg_data import BeatAnnotation
from .errors import InputError

SVG_WIDTH = 1000
SVG_HEIGHT = 420
MARGIN = 48

_TRACE_COLORS = ("#1f77b4", "#d62728")
_MARKER_COLORS = {"S": "#ff7f0e", "V": "#9467bd"}


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def render_segment_svg(
    original,
    restored=None,
    annotations: Sequence[BeatAnnotation] = (),
    title: str = "",
) -> str:
    """Draw one segment (and optionally its restored counterpart) as SVG.

    S and V beats get labeled markers on the original trace; N beats are
    left unmarked.
    """
    x = np.asarray(original, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise InputError("plotting needs a 1-D segment of at least 2 samples")
    traces = [("original", x)]
    if restored is not None:
        r = np.asarray(restored, dtype=np.float64)
        if r.shape != x.shape:
            raise InputError(f"restored trace shape {r.shape} does not match {x.shape}")
        traces.append(("restored", r))

    stacked = np.concatenate([t for _, t in traces])
    lo = float(np.min(stacked))
    hi = float(np.max(stacked))
    if hi == lo:
        lo -= 1.0
        hi += 1.0
    span = hi - lo
    lo -= 0.05 * span
    hi += 0.05 * span

    inner_w = SVG_WIDTH - 2 * MARGIN
    inner_h = SVG_HEIGHT - 2 * MARGIN

    def px(i: float) -> float:
        return MARGIN + inner_w * (i / (x.size - 1))

    def py(v: float) -> float:
        return SVG_HEIGHT - MARGIN - inner_h * ((v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{inner_w}" height="{inner_h}" '
        'fill="none" stroke="#888888" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{SVG_WIDTH // 2}" y="24" text-anchor="middle" '
            f'font-family="monospace" font-size="14">{escape(title)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN}" y="{MARGIN - 6}" font-family="monospace" '
        f'font-size="11" fill="#555555">{_fmt(hi)} mV</text>'
    )
    parts.append(
        f'<text x="{MARGIN}" y="{SVG_HEIGHT - MARGIN + 14}" font-family="monospace" '
        f'font-size="11" fill="#555555">{_fmt(lo)} mV / {x.size} samples</text>'
    )
    for (name, trace), color in zip(traces, _TRACE_COLORS):
        points = " ".join(f"{_fmt(px(i))},{_fmt(py(v))}" for i, v in enumerate(trace))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1"/>'
        )
    for k, ((name, _), color) in enumerate(zip(traces, _TRACE_COLORS)):
        lx = SVG_WIDTH - MARGIN - 110
        ly = MARGIN + 16 + 16 * k
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 30}" y="{ly}" font-family="monospace" '
            f'font-size="12">{name}</text>'
        )
    for ann in annotations:
        color = _MARKER_COLORS.get(ann.label)
        if color is None or not 0 <= ann.sample_index < x.size:
            continue
        cx = _fmt(px(ann.sample_index))
        cy = _fmt(py(float(x[ann.sample_index])))
        parts.append(
            f'<circle cx="{cx}" cy="{cy}" r="5" fill="none" stroke="{color}" '
            'stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{cx}" y="{_fmt(py(float(x[ann.sample_index])) - 10)}" '
            f'text-anchor="middle" font-family="monospace" font-size="12" '
            f'fill="{color}">{ann.label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_csv(original, restored=None) -> str:
    """One row per plotted sample, floats in round-trip repr."""
    x = np.asarray(original, dtype=np.float64)
    if restored is None:
        lines = ["sample,original_mv"]
        lines += [f"{i},{float(v)!r}" for i, v in enumerate(x)]
    else:
        r = np.asarray(restored, dtype=np.float64)
        if r.shape != x.shape:
            raise InputError(f"restored trace shape {r.shape} does not match {x.shape}")
        lines = ["sample,original_mv,restored_mv"]
        lines += [f"{i},{float(a)!r},{float(b)!r}" for i, (a, b) in enumerate(zip(x, r))]
    return "\n".join(lines) + "\n"
