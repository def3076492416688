"""Self-contained SVG line plots with linear or logarithmic axes.

The data-to-pixel map is exposed through ``Axes`` so that tests can parse the
written polylines back into data coordinates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 440
MARGIN = {"left": 80, "right": 20, "top": 40, "bottom": 60}
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


class PlotError(ValueError):
    pass


@dataclass
class Axes:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    logx: bool = False
    logy: bool = False

    def _t(self, v, log):
        return math.log10(v) if log else v

    def _frac(self, v, lo, hi, log):
        a, b = self._t(lo, log), self._t(hi, log)
        return 0.5 if b == a else (self._t(v, log) - a) / (b - a)

    def to_pixel(self, x: float, y: float) -> tuple[float, float]:
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        px = MARGIN["left"] + w * self._frac(x, self.xmin, self.xmax, self.logx)
        py = HEIGHT - MARGIN["bottom"] - h * self._frac(y, self.ymin, self.ymax, self.logy)
        return px, py

    def to_data(self, px: float, py: float) -> tuple[float, float]:
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

        def back(f, lo, hi, log):
            a, b = self._t(lo, log), self._t(hi, log)
            v = a + f * (b - a)
            return 10.0**v if log else v

        return (back((px - MARGIN["left"]) / w, self.xmin, self.xmax, self.logx),
                back((HEIGHT - MARGIN["bottom"] - py) / h, self.ymin, self.ymax, self.logy))


def _clean(x, y, logx, logy):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    if logx:
        keep &= x > 0
    if logy:
        keep &= y > 0
    return x[keep], y[keep]


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**k for k in range(a, b + 1) if lo * (1 - 1e-9) <= 10.0**k <= hi * (1 + 1e-9)]
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, 5))


def line_plot(series, xlabel: str, ylabel: str, logx: bool = False, logy: bool = False, title: str = "") -> str:
    """SVG text for a list of (label, x, y) series."""
    if not series:
        raise PlotError("no series to plot")
    cleaned = []
    for label, x, y in series:
        cx, cy = _clean(x, y, logx, logy)
        if len(cx) == 0:
            raise PlotError(f"series {label!r} is empty (after dropping non-finite or non-positive log values)")
        order = np.argsort(cx, kind="stable")
        cleaned.append((label, cx[order], cy[order]))
    xs = np.concatenate([c[1] for c in cleaned])
    ys = np.concatenate([c[2] for c in cleaned])
    ax = Axes(float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max()), logx, logy)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xmin="{ax.xmin!r}" data-xmax="{ax.xmax!r}" '
           f'data-ymin="{ax.ymin!r}" data-ymax="{ax.ymax!r}" data-logx="{int(logx)}" data-logy="{int(logy)}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    x0, y0 = MARGIN["left"], HEIGHT - MARGIN["bottom"]
    x1, y1 = WIDTH - MARGIN["right"], MARGIN["top"]
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>')
    for v in _ticks(ax.xmin, ax.xmax, logx):
        px, _ = ax.to_pixel(v, ax.ymin)
        out.append(f'<line x1="{px:.3f}" y1="{y0}" x2="{px:.3f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.3f}" y="{y0 + 18}" font-size="11" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(ax.ymin, ax.ymax, logy):
        _, py = ax.to_pixel(ax.xmin, v)
        out.append(f'<line x1="{x0 - 5}" y1="{py:.3f}" x2="{x0}" y2="{py:.3f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{py + 4:.3f}" font-size="11" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 15}" font-size="13" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{(y0 + y1) / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 18 {(y0 + y1) / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" font-size="14" text-anchor="middle">{escape(title)}</text>')
    for k, (label, x, y) in enumerate(cleaned):
        color = COLORS[k % len(COLORS)]
        pts = " ".join("{:.6f},{:.6f}".format(*ax.to_pixel(a, b)) for a, b in zip(x, y))
        out.append(f'<polyline data-label="{escape(str(label))}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{x1 - 10}" y="{y1 + 16 * (k + 1)}" font-size="11" text-anchor="end" '
                   f'fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_csv(path) -> dict:
    """Columns of a CSV file, skipping '#' manifest lines; numeric where possible."""
    with open(path, newline="") as fh:
        text = "".join(line for line in fh if not line.startswith("#"))
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise PlotError(f"{path}: no data rows")
    cols = {}
    for name in rows[0]:
        vals = [r[name] for r in rows]
        try:
            cols[name] = np.array([float(v) if v != "" else math.nan for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return cols


def require(cols: dict, names, path="") -> None:
    for name in names:
        if name not in cols:
            raise PlotError(f"{path}: missing column {name!r}")


# default figures per CSV schema: (x column, y column, logx, logy, group column)
DEFAULT_FIGURES = {
    "timeseries": [("t", "E", False, True, None), ("t", "d_min", False, True, None)],
    "convergence": [("N", "W2", True, True, "t"), ("inv_lambda", "W2", True, True, "t")],
}


def figures_for(cols: dict) -> str:
    if "inv_lambda" in cols and "N" in cols:
        return "convergence"
    if "t" in cols and "d_min" in cols:
        return "timeseries"
    raise PlotError("unknown CSV schema: expected a timeseries or a convergence table")


def plot_columns(cols: dict, x: str, y: str, logx: bool, logy: bool, group: str | None = None, path="") -> str:
    require(cols, [x, y] + ([group] if group else []), path)
    if group is None:
        series = [(y, cols[x], cols[y])]
    else:
        series = []
        for g in sorted(set(cols[group][np.isfinite(cols[group])].tolist())):
            sel = cols[group] == g
            series.append((f"{group}={g:g}", cols[x][sel], cols[y][sel]))
    return line_plot(series, x, y, logx, logy)
