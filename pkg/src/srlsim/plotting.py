"""Static SVG line plots of simulation records.

Output is plain text built from fixed-precision numbers, so the same record
always produces the same bytes.  One panel is drawn per record, stacked
vertically, with the true gait phase shaded behind the curves.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import PlotError

WIDTH = 760
PANEL_HEIGHT = 230
MARGIN_LEFT = 64
MARGIN_RIGHT = 120
MARGIN_TOP = 30
MARGIN_BOTTOM = 36
MAX_POINTS = 1500
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
PHASE_FILL = {"CM": "#fde9c8", "ST": "#dce8f5"}

# kind -> (y label, [(column, legend, dashed)])
KINDS = {
    "trajectory": (
        "angle (rad)",
        [("q1", "hip", False), ("qd1", "hip ref", True), ("q2", "knee", False), ("qd2", "knee ref", True)],
    ),
    "force": ("ground force (N)", [("grf", "grf", False)]),
    "impedance": ("gain", [("K", "K (N m/rad)", False), ("B", "B (N m s/rad)", True)]),
}


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:g}" if abs(v) >= 1e-3 or v == 0 else f"{v:.1e}"


def _phase_spans(t: np.ndarray, phases) -> list[tuple[float, float, str]]:
    spans = []
    start = 0
    for i in range(1, len(phases) + 1):
        if i == len(phases) or phases[i] != phases[start]:
            code = str(phases[start])
            if code in PHASE_FILL:
                spans.append((float(t[start]), float(t[min(i, len(t) - 1)]), code))
            start = i
    return spans


def _panel(columns: dict, title: str, kind: str, top: float) -> list[str]:
    ylabel, series = KINDS[kind]
    t = np.asarray(columns["t"], dtype=float)
    stride = max(1, math.ceil(t.size / MAX_POINTS))
    idx = np.arange(0, t.size, stride)
    if idx[-1] != t.size - 1:
        idx = np.append(idx, t.size - 1)
    present = [s for s in series if s[0] in columns]
    ys = [np.asarray(columns[c], dtype=float)[idx] for c, _, _ in present]
    lo = min(float(np.min(y)) for y in ys)
    hi = max(float(np.max(y)) for y in ys)
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    yticks = _nice_ticks(lo - pad, hi + pad)
    y0, y1 = min(yticks[0], lo), max(yticks[-1], hi)
    t0, t1 = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0
    x_left, x_right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    y_top, y_bot = top + MARGIN_TOP, top + PANEL_HEIGHT - MARGIN_BOTTOM

    def X(v):
        return x_left + (v - t0) / (t1 - t0) * (x_right - x_left)

    def Y(v):
        return y_bot - (v - y0) / (y1 - y0) * (y_bot - y_top)

    out = [f'<g class="panel">', f'<text x="{x_left}" y="{_fmt(top + 18)}" font-size="13">{title}</text>']
    if "phase_true" in columns:
        for a, b, code in _phase_spans(t, columns["phase_true"]):
            out.append(
                f'<rect x="{_fmt(X(a))}" y="{_fmt(y_top)}" width="{_fmt(X(b) - X(a))}" '
                f'height="{_fmt(y_bot - y_top)}" fill="{PHASE_FILL[code]}"/>'
            )
    out.append(
        f'<rect x="{x_left}" y="{_fmt(y_top)}" width="{x_right - x_left}" height="{_fmt(y_bot - y_top)}" '
        'fill="none" stroke="#333"/>'
    )
    for v in yticks:
        if y0 <= v <= y1:
            out.append(f'<line x1="{x_left - 4}" y1="{_fmt(Y(v))}" x2="{x_left}" y2="{_fmt(Y(v))}" stroke="#333"/>')
            out.append(
                f'<text x="{x_left - 6}" y="{_fmt(Y(v) + 4)}" font-size="10" text-anchor="end">{_label(v)}</text>'
            )
    for v in _nice_ticks(t0, t1, 8):
        if t0 <= v <= t1:
            out.append(f'<line x1="{_fmt(X(v))}" y1="{_fmt(y_bot)}" x2="{_fmt(X(v))}" y2="{_fmt(y_bot + 4)}" stroke="#333"/>')
            out.append(
                f'<text x="{_fmt(X(v))}" y="{_fmt(y_bot + 16)}" font-size="10" text-anchor="middle">{_label(v)}</text>'
            )
    out.append(
        f'<text x="{_fmt((x_left + x_right) / 2)}" y="{_fmt(y_bot + 30)}" font-size="11" '
        'text-anchor="middle">time (s)</text>'
    )
    out.append(
        f'<text x="14" y="{_fmt((y_top + y_bot) / 2)}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {_fmt((y_top + y_bot) / 2)})">{ylabel}</text>'
    )
    tt = t[idx]
    for k, ((col, name, dashed), y) in enumerate(zip(present, ys)):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{_fmt(X(a))},{_fmt(Y(b))}" for a, b in zip(tt, y))
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{pts}"/>')
        ly = y_top + 12 + 16 * k
        out.append(
            f'<line x1="{x_right + 8}" y1="{_fmt(ly)}" x2="{x_right + 30}" y2="{_fmt(ly)}" '
            f'stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        out.append(f'<text x="{x_right + 34}" y="{_fmt(ly + 4)}" font-size="10">{name}</text>')
    out.append("</g>")
    return out


def render_svg(records, kind: str, titles=None) -> str:
    """SVG text with one panel per record.

    ``records`` holds :class:`~srlsim.sim.SimRecord` objects or plain column
    dicts.  Raises :class:`PlotError` for an unknown kind, an empty record or
    a record lacking every column the kind needs.
    """
    if kind not in KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {', '.join(KINDS)}")
    records = list(records)
    if not records:
        raise PlotError("nothing to plot")
    panels = []
    for n, rec in enumerate(records):
        columns = rec.columns if hasattr(rec, "columns") else rec
        if "t" not in columns or len(columns["t"]) == 0:
            raise PlotError("record is empty")
        if len(columns["t"]) < 2:
            raise PlotError("record needs at least two samples")
        needed = [c for c, _, _ in KINDS[kind][1]]
        if not any(c in columns for c in needed):
            raise PlotError(f"record lacks the columns for a {kind} plot: {', '.join(needed)}")
        if titles is not None:
            title = titles[n]
        else:
            title = " ".join(x for x in (getattr(rec, "mode", ""), getattr(rec, "run_id", "")) if x) or f"run {n}"
        panels.extend(_panel(columns, _escape(title), kind, n * PANEL_HEIGHT))
    height = PANEL_HEIGHT * len(records)
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">',
        f'<rect width="{WIDTH}" height="{height}" fill="white"/>',
    ]
    return "\n".join(head + panels + ["</svg>"]) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(records, kind: str, path, titles=None) -> Path:
    """Render and write; nothing is written when rendering fails."""
    text = render_svg(records, kind, titles)
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path
