"""Static SVG line plots written without any rendering library.

Output is a pure function of the input data: coordinates are printed with a
fixed number of decimals and no timestamps or ids are embedded, so identical
inputs give byte-identical files.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = (70, 20, 40, 50)      # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
MAX_POINTS = 2000


class MissingChannelError(KeyError):
    """A plot needs a column the input does not have."""

    def __init__(self, column):
        super().__init__(column)
        self.column = column

    def __str__(self):
        return f"plot: input has no column {self.column!r}"


def nice_ticks(lo, hi, n=5):
    """Round tick positions covering ``[lo, hi]``."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("plot: non-finite data range")
    if hi <= lo:
        pad = abs(lo) * 0.05 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    first = math.floor(lo / step + 1e-9) * step
    last = math.ceil(hi / step - 1e-9) * step
    k = int(round((last - first) / step))
    return [first + i * step for i in range(k + 1)]


def _fmt(v):
    s = f"{v:.6g}"
    return "0" if s in ("-0", "0") else s


def _decimate(x, y):
    if len(x) <= MAX_POINTS:
        return x, y
    idx = np.unique(np.linspace(0, len(x) - 1, MAX_POINTS).round().astype(int))
    return x[idx], y[idx]


def line_plot(series, xlabel, ylabel, title, hlines=()):
    """SVG text of a single-axes line plot.

    Parameters
    ----------
    series : list of (label, x, y)
    hlines : list of (value, label)
        Dashed horizontal reference lines.
    """
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series] + [[v for v, _ in hlines]])
    xt = nice_ticks(float(xs.min()), float(xs.max()))
    yt = nice_ticks(float(np.nanmin(ys)), float(np.nanmax(ys)))
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + (x - xt[0]) / (xt[-1] - xt[0]) * pw

    def py(y):
        return top + ph - (y - yt[0]) / (yt[-1] - yt[0]) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
           f'{escape(title)}</text>']
    for v in xt:
        x = px(v)
        out.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{top + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 15}" text-anchor="middle">{_fmt(v)}</text>')
    for v in yt:
        y = py(v)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 5}" y="{y + 4:.2f}" text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for v, label in hlines:
        y = py(v)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="black" '
                   f'stroke-dasharray="6,4"/>')
        out.append(f'<text x="{left + pw - 4}" y="{y - 4:.2f}" text-anchor="end">'
                   f'{escape(label)}</text>')
    for k, (label, x, y) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        x, y = _decimate(np.asarray(x, float), np.asarray(y, float))
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = top + 14 + 14 * k
        out.append(f'<line x1="{left + 8}" y1="{ly - 4}" x2="{left + 28}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 32}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _col(data, name):
    if name not in data:
        raise MissingChannelError(name)
    return np.asarray(data[name], dtype=float)


# (file stem, title, y label, y scale, [(column, legend)])
TRAJECTORY_PLOTS = (
    ("pitch", "Body pitch", "pitch [deg]", 180.0 / math.pi, [("pitch", "theta_y")]),
    ("velocity", "Body velocity", "velocity [m/s]", 1.0,
     [("vx", "v_x"), ("vy", "v_y"), ("vz", "v_z")]),
    ("fdc", "FDC lengths", "length [mm]", 1e3,
     [("l3b", "l3b"), ("l3c", "l3c"), ("l8b", "l8b"), ("l10b", "l10b")]),
    ("forces", "Aerodynamic forces", "force [N]", 1.0, [("lift", "lift"), ("thrust", "thrust")]),
)


def trajectory_figures(data, pitch_ref=None):
    """``{stem: svg}`` for the trajectory channel groups.

    ``data`` maps CSV column names to arrays.  ``pitch_ref`` (rad) adds a
    dashed reference line to the pitch plot.
    """
    t = _col(data, "t")
    figs = {}
    for stem, title, ylabel, scale, cols in TRAJECTORY_PLOTS:
        series = [(legend, t, _col(data, c) * scale) for c, legend in cols]
        hl = ()
        if stem == "pitch" and pitch_ref is not None:
            hl = ((pitch_ref * scale, f"reference {pitch_ref * scale:.0f} deg"),)
        figs[stem] = line_plot(series, "time [s]", ylabel, title, hl)
    return figs


def cost_trace_figure(result):
    """Cost and best-so-far cost against evaluation index of an optimization result dict."""
    if "trace" not in result:
        raise MissingChannelError("trace")
    tr = np.asarray(result["trace"], dtype=float)
    feas = np.asarray(result.get("feasible", [True] * len(tr)), dtype=bool)
    k = np.arange(1, len(tr) + 1, dtype=float)
    y = np.where(feas, tr, np.nan)
    best = np.fmin.accumulate(y)
    return line_plot([("cost", k, y), ("best so far", k, best)], "evaluation", "cost J",
                     f"Optimization trace ({result.get('problem', 'unknown')})")
