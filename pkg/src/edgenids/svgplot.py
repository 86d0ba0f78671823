"""Small self-contained SVG line charts (no plotting dependency).

Every data point is drawn as a circle carrying a ``<title>`` with its exact
coordinates, so the numbers can be read back from the file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
WIDTH, HEIGHT = 720, 440
MARGIN = dict(left=78, right=78, top=42, bottom=58)


@dataclass
class Series:
    label: str
    x: list
    y: list
    secondary: bool = False  # plot against the right-hand axis
    dashed: bool = False


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    logx: bool = False
    logy: bool = False
    y2label: str | None = None
    hline: float | None = None  # horizontal reference on the primary axis

    def add(self, label, x, y, **kw) -> "Chart":
        self.series.append(Series(label, list(x), list(y), **kw))
        return self


def _finite(v, log: bool) -> bool:
    return v is not None and math.isfinite(v) and (v > 0 or not log)


def _bounds(values, log: bool, extra=()) -> tuple[float, float]:
    vals = [v for v in list(values) + list(extra) if _finite(v, log)]
    if not vals:
        return (1.0, 10.0) if log else (0.0, 1.0)
    lo, hi = min(vals), max(vals)
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
        if hi - lo < 1e-9:
            lo, hi = lo - 0.5, hi + 0.5
        return math.floor(lo * 2) / 2, math.ceil(hi * 2) / 2
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        pad = max(abs(hi) * 0.1, 1e-3)
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, log: bool) -> list[tuple[float, str]]:
    if log:
        out = [(float(e), f"1e{e}") for e in range(math.ceil(lo), math.floor(hi) + 1)]
        return out or [(lo, f"{10 ** lo:.3g}"), (hi, f"{10 ** hi:.3g}")]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out, t = [], first
    while t <= hi + step * 1e-9:
        out.append((t, f"{t:.6g}"))
        t += step
    return out


class _Axis:
    def __init__(self, lo, hi, log, a, b):
        self.lo, self.hi, self.log, self.a, self.b = lo, hi, log, a, b

    def __call__(self, v: float) -> float:
        t = math.log10(v) if self.log else v
        return self.a + (t - self.lo) / (self.hi - self.lo) * (self.b - self.a)


def render(chart: Chart) -> str:
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    prim = [s for s in chart.series if not s.secondary]
    sec = [s for s in chart.series if s.secondary]
    xs = [v for s in chart.series for v in s.x]
    extra = [chart.hline] if chart.hline is not None else []
    X = _Axis(*_bounds(xs, chart.logx), chart.logx, x0, x1)
    Y = _Axis(*_bounds([v for s in prim for v in s.y], chart.logy, extra), chart.logy, y0, y1)
    Y2 = _Axis(*_bounds([v for s in sec for v in s.y], False), False, y0, y1) if sec else None

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{escape(chart.title)}</text>']
    # grid and ticks
    for t, lab in _ticks(X.lo, X.hi, X.log):
        px = X.a + (t - X.lo) / (X.hi - X.lo) * (X.b - X.a)
        out.append(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y1}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{px:.1f}" y="{y0 + 16}" text-anchor="middle">{lab}</text>')
    for t, lab in _ticks(Y.lo, Y.hi, Y.log):
        py = Y.a + (t - Y.lo) / (Y.hi - Y.lo) * (Y.b - Y.a)
        out.append(f'<line x1="{x0}" y1="{py:.1f}" x2="{x1}" y2="{py:.1f}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{x0 - 6}" y="{py + 4:.1f}" text-anchor="end">{lab}</text>')
    if Y2 is not None:
        for t, lab in _ticks(Y2.lo, Y2.hi, False):
            py = Y2.a + (t - Y2.lo) / (Y2.hi - Y2.lo) * (Y2.b - Y2.a)
            out.append(f'<text x="{x1 + 6}" y="{py + 4:.1f}" text-anchor="start">{lab}</text>')
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#333"/>')
    out.append(f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 16}" text-anchor="middle">{escape(chart.xlabel)}</text>')
    out.append(f'<text transform="translate(18 {(y0 + y1) / 2}) rotate(-90)" text-anchor="middle">'
               f'{escape(chart.ylabel)}</text>')
    if chart.y2label and Y2 is not None:
        out.append(f'<text transform="translate({WIDTH - 14} {(y0 + y1) / 2}) rotate(90)" '
                   f'text-anchor="middle">{escape(chart.y2label)}</text>')
    if chart.hline is not None and _finite(chart.hline, chart.logy):
        py = Y(chart.hline)
        out.append(f'<line class="reference" x1="{x0}" y1="{py:.1f}" x2="{x1}" y2="{py:.1f}" '
                   f'stroke="#1f3fbf" stroke-width="1.5"/>')
    # series
    for i, s in enumerate(chart.series):
        color = PALETTE[i % len(PALETTE)]
        ax = Y2 if s.secondary else Y
        logy = False if s.secondary else chart.logy
        pts = [(x, y) for x, y in zip(s.x, s.y) if _finite(x, chart.logx) and _finite(y, logy)]
        pts.sort()
        dash = ' stroke-dasharray="6 4"' if s.dashed or s.secondary else ""
        if len(pts) > 1:
            path = " ".join(f"{X(x):.2f},{ax(y):.2f}" for x, y in pts)
            out.append(f'<polyline class="series" data-label="{escape(s.label)}" points="{path}" '
                       f'fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        for x, y in pts:
            out.append(f'<circle cx="{X(x):.2f}" cy="{ax(y):.2f}" r="3" fill="{color}">'
                       f'<title>{escape(s.label)}: x={x!r} y={y!r}</title></circle>')
        ly = y1 + 16 + 16 * i
        out.append(f'<line x1="{x0 + 10}" y1="{ly - 4}" x2="{x0 + 30}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{x0 + 36}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(chart: Chart, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render(chart))
