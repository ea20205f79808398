"""Minimal self-contained SVG log-log plots (no plotting library needed)."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def _ticks(lo: float, hi: float) -> list[float]:
    return [10.0**k for k in range(math.floor(lo), math.ceil(hi) + 1)]


def loglog_svg(series: dict[str, tuple[list, list]], title: str = "", xlabel: str = "N", ylabel: str = "L2 error",
               width: int = 560, height: int = 420) -> str:
    """Render ``{label: (xs, ys)}`` on log-log axes; nonpositive points are skipped."""
    pts = {k: [(x, y) for x, y in zip(*v) if x > 0 and y > 0 and math.isfinite(y)] for k, v in series.items()}
    allp = [p for v in pts.values() for p in v]
    ml, mr, mt, mb = 70, 130, 40, 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if not allp:
        out.append(f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no data</text></svg>')
        return "\n".join(out)
    lx = [math.log10(p[0]) for p in allp]
    ly = [math.log10(p[1]) for p in allp]
    x0, x1 = min(lx) - 0.1, max(lx) + 0.1
    y0, y1 = math.floor(min(ly)), math.ceil(max(ly))
    if y1 - y0 < 1:
        y1 = y0 + 1
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + (math.log10(v) - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + (y1 - math.log10(v)) / (y1 - y0) * ph

    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(y0, y1):
        y = sy(t)
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{y:.1f}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end">1e{int(round(math.log10(t)))}</text>')
    xs = sorted({p[0] for p in allp})
    for v in xs:
        x = sx(v)
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle">{v:g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, p) in enumerate(pts.items()):
        if not p:
            continue
        col = COLORS[i % len(COLORS)]
        p = sorted(p)
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in p)
        out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
        for x, y in p:
            out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{col}"/>')
        ly_ = mt + 16 + 18 * i
        out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly_}" y2="{ly_}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly_ + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def write_loglog(path, series, **kw) -> Path:
    path = Path(path)
    path.write_text(loglog_svg(series, **kw))
    return path
