"""Static SVG figures with companion CSV tables.

Every figure is plain SVG 1.1 text built from fixed-precision numbers, so
the same inputs always give the same bytes. Each renderer returns a
:class:`Figure` holding the SVG and a CSV of the plotted series.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .cohortmodel import fmt
from .errors import ValidationError

ARM_COLORS = {1: "#f28e2b", 0: "#7b4ea3"}  # treatment orange, placebo purple
ARM_NAMES = {1: "treatment", 0: "placebo"}
MIN_BOX_N = 5
KINDS = ("BoxByArm", "CVPath", "CIndexBars", "ImportanceBars", "Trace")

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 60


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    title: str = ""
    log_scale: bool = False
    output: str | None = None
    x_label: str = ""
    y_label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown figure kind {self.kind!r}")


@dataclass(frozen=True)
class Figure:
    svg: str
    csv: str
    meta: dict = field(default_factory=dict)

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``<path>.svg`` and ``<path>.csv``; returns both paths."""
        base = Path(path)
        if base.suffix == ".svg":
            base = base.with_suffix("")
        svg_path, csv_path = base.with_suffix(".svg"), base.with_suffix(".csv")
        svg_path.parent.mkdir(parents=True, exist_ok=True)
        svg_path.write_bytes(self.svg.encode())
        csv_path.write_bytes(self.csv.encode())
        return svg_path, csv_path


def _n(x: float) -> str:
    return f"{x:.2f}"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


class _Canvas:
    def __init__(self, title: str, width: int = W, height: int = H):
        self.w, self.h = width, height
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        ]
        if title:
            self.text(width / 2, 22, title, size=14, anchor="middle")

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="start", rotate=None, color="black"):
        tr = f' transform="rotate({rotate} {_n(x)} {_n(y)})"' if rotate is not None else ""
        self.add(f'<text x="{_n(x)}" y="{_n(y)}" font-family="sans-serif" font-size="{size}" '
                 f'text-anchor="{anchor}" fill="{color}"{tr}>{escape(str(s))}</text>')

    def line(self, x1, y1, x2, y2, color="black", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" stroke="{color}" '
                 f'stroke-width="{width}"{d}/>')

    def rect(self, x, y, w, h, fill="none", stroke="black", opacity=None):
        o = f' fill-opacity="{opacity}"' if opacity is not None else ""
        self.add(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}" fill="{fill}" stroke="{stroke}"{o}/>')

    def circle(self, x, y, r=3, fill="black"):
        self.add(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="{r}" fill="{fill}"/>')

    def polyline(self, pts, color="black", width=1.0):
        s = " ".join(f"{_n(x)},{_n(y)}" for x, y in pts)
        self.add(f'<polyline points="{s}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def done(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Axis:
    """Linear map from data to pixels with 5 rounded ticks."""

    def __init__(self, lo: float, hi: float, p0: float, p1: float, pad: float = 0.05):
        if not (math.isfinite(lo) and math.isfinite(hi)):
            lo, hi = 0.0, 1.0
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        span = hi - lo
        self.lo, self.hi = lo - pad * span, hi + pad * span
        self.p0, self.p1 = p0, p1

    def __call__(self, v):
        return self.p0 + (np.asarray(v, dtype=float) - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)

    def ticks(self, k: int = 5):
        return np.linspace(self.lo, self.hi, k)


def _frame(c: _Canvas, xa: _Axis | None, ya: _Axis, x_label: str, y_label: str, y_fmt=lambda v: f"{v:.3g}"):
    c.line(LEFT, c.h - BOTTOM, c.w - RIGHT, c.h - BOTTOM)
    c.line(LEFT, TOP, LEFT, c.h - BOTTOM)
    for v in ya.ticks():
        y = float(ya(v))
        c.line(LEFT - 4, y, LEFT, y)
        c.text(LEFT - 6, y + 4, y_fmt(v), size=10, anchor="end")
    if xa is not None:
        for v in xa.ticks():
            x = float(xa(v))
            c.line(x, c.h - BOTTOM, x, c.h - BOTTOM + 4)
            c.text(x, c.h - BOTTOM + 16, f"{v:.3g}", size=10, anchor="middle")
    if x_label:
        c.text((LEFT + c.w - RIGHT) / 2, c.h - 12, x_label, anchor="middle")
    if y_label:
        c.text(16, (TOP + c.h - BOTTOM) / 2, y_label, anchor="middle", rotate=-90)


# ---------------------------------------------------------------------------
# box plots


def quantile7(values, q) -> np.ndarray:
    """Linear-interpolation sample quantile (type 7)."""
    return np.quantile(np.asarray(values, dtype=float), q, method="linear")


def box_stats(values) -> dict:
    """Median, quartiles and 1.5 IQR whiskers (most extreme points inside the fences)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValidationError("box statistics need at least one value")
    q1, med, q3 = quantile7(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {
        "n": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
        "outliers": [float(x) for x in v[(v < lo_fence) | (v > hi_fence)]],
    }


def render_box_by_arm(features: Mapping[tuple[str, int], Sequence[float]], spec: FigureSpec) -> Figure:
    """Box plots per (timepoint, arm) cell.

    ``features`` maps ``(timepoint label, arm)`` to observed values; cells keep
    their insertion order along the x axis. With ``spec.log_scale`` the
    statistics are computed on log10 values. Cells with fewer than 5 values
    are left out and noted on the plot.
    """
    if spec.kind != "BoxByArm":
        raise ValidationError("spec kind must be BoxByArm")
    if not features:
        raise ValidationError("no cells to plot")
    cells, skipped = [], []
    for (tp, arm), vals in features.items():
        v = np.asarray(vals, dtype=float)
        v = v[np.isfinite(v)]
        if spec.log_scale:
            v = v[v > 0]
            v = np.log10(v)
        if v.size < MIN_BOX_N:
            skipped.append((tp, arm, int(v.size)))
            continue
        cells.append((tp, int(arm), box_stats(v)))
    c = _Canvas(spec.title)
    rows = []
    if cells:
        lo = min(min(s["whisker_low"], *s["outliers"]) if s["outliers"] else s["whisker_low"] for _, _, s in cells)
        hi = max(max(s["whisker_high"], *s["outliers"]) if s["outliers"] else s["whisker_high"] for _, _, s in cells)
        ya = _Axis(lo, hi, H - BOTTOM, TOP)
        _frame(c, None, ya, spec.x_label, spec.y_label or ("log10 value" if spec.log_scale else "value"))
        slot = (W - LEFT - RIGHT) / len(cells)
        for k, (tp, arm, s) in enumerate(cells):
            x = LEFT + slot * (k + 0.5)
            bw = slot * 0.3
            col = ARM_COLORS.get(arm, "#888888")
            c.line(x, float(ya(s["whisker_low"])), x, float(ya(s["q1"])), col)
            c.line(x, float(ya(s["q3"])), x, float(ya(s["whisker_high"])), col)
            c.rect(x - bw, float(ya(s["q3"])), 2 * bw, float(ya(s["q1"]) - ya(s["q3"])), fill=col, stroke=col, opacity="0.35")
            c.line(x - bw, float(ya(s["median"])), x + bw, float(ya(s["median"])), col, 2.0)
            for o in s["outliers"]:
                c.circle(x, float(ya(o)), 2, col)
            c.text(x, H - BOTTOM + 16, tp, size=10, anchor="middle")
            c.text(x, H - BOTTOM + 30, ARM_NAMES.get(arm, str(arm)), size=9, anchor="middle", color=col)
            rows.append((tp, arm, s["n"], s["q1"], s["median"], s["q3"], s["whisker_low"], s["whisker_high"], len(s["outliers"])))
    for i, (tp, arm, n) in enumerate(skipped):
        c.text(W - RIGHT, TOP + 12 * i, f"{tp} arm {arm}: n={n}, omitted", size=9, anchor="end")
        rows.append((tp, arm, n, "", "", "", "", "", ""))
    header = ("timepoint", "arm", "n", "q1", "median", "q3", "whisker_low", "whisker_high", "n_outliers")
    return Figure(c.done(), _csv(header, rows), {"omitted": skipped})


# ---------------------------------------------------------------------------
# lasso cross-validation path


def render_cvpath(path, spec: FigureSpec | None = None) -> Figure:
    """Mean CV C-index (with SE bars) against log lambda; nonzero counts on top."""
    spec = spec or FigureSpec("CVPath", x_label="log(lambda)", y_label="C-index")
    if path.mean_c is None or len(path.lambdas) == 0:
        raise ValidationError("path carries no cross-validation statistics")
    x = np.log(np.asarray(path.lambdas, dtype=float))
    m = np.asarray(path.mean_c, dtype=float)
    se = np.asarray(path.se_c, dtype=float)
    ok = np.isfinite(m)
    c = _Canvas(spec.title)
    xa = _Axis(x.min(), x.max(), LEFT, W - RIGHT)
    lo = np.nanmin(np.where(ok, m - se, np.nan)) if ok.any() else 0.0
    hi = np.nanmax(np.where(ok, m + se, np.nan)) if ok.any() else 1.0
    ya = _Axis(lo, hi, H - BOTTOM, TOP + 14)
    _frame(c, xa, ya, spec.x_label, spec.y_label)
    for k in range(len(x)):
        px = float(xa(x[k]))
        c.text(px, TOP + 6, str(int(path.nnz[k])), size=7, anchor="middle", color="#555555")
        if not ok[k]:
            continue
        c.line(px, float(ya(m[k] - se[k])), px, float(ya(m[k] + se[k])), "#999999")
        c.circle(px, float(ya(m[k])), 2.5, "#d62728")
    if path.lambda_opt is not None:
        px = float(xa(np.log(path.lambda_opt)))
        c.line(px, TOP + 10, px, H - BOTTOM, "#333333", 1.0, dash="4,3")
    rows = [(float(path.lambdas[k]), float(x[k]), float(m[k]), float(se[k]), int(path.nnz[k]),
             int(path.lambda_opt is not None and path.lambdas[k] == path.lambda_opt)) for k in range(len(x))]
    return Figure(c.done(), _csv(("lambda", "log_lambda", "mean_c", "se_c", "nnz", "optimal"), rows),
                  {"n_annotations": len(x)})


# ---------------------------------------------------------------------------
# bar charts


def _bars(values, lows, highs, labels, spec: FigureSpec, color="#4c78a8", horizontal=False):
    c = _Canvas(spec.title)
    n = len(values)
    top = max(highs) if highs is not None else max(values)
    ya = _Axis(0.0, max(top, 1e-12), H - BOTTOM, TOP, pad=0.0)
    ya.hi = ya.hi * 1.05
    _frame(c, None, ya, spec.x_label, spec.y_label)
    slot = (W - LEFT - RIGHT) / max(n, 1)
    for k in range(n):
        x = LEFT + slot * (k + 0.5)
        y = float(ya(values[k]))
        c.rect(x - slot * 0.3, y, slot * 0.6, float(ya(0.0)) - y, fill=color, stroke=color)
        if highs is not None:
            c.line(x, float(ya(lows[k])), x, float(ya(highs[k])))
            c.line(x - 6, float(ya(lows[k])), x + 6, float(ya(lows[k])))
            c.line(x - 6, float(ya(highs[k])), x + 6, float(ya(highs[k])))
        c.text(x, H - BOTTOM + 16, labels[k], size=9 if n < 12 else 7, anchor="end" if n >= 12 else "middle",
               rotate=-45 if n >= 12 else None)
    return c.done()


def render_cindex_bars(estimates, labels: Sequence[str], spec: FigureSpec | None = None) -> Figure:
    """Bootstrap C-index estimates as bars; whiskers are the ``ci95`` endpoints."""
    spec = spec or FigureSpec("CIndexBars", y_label="C-index")
    estimates = list(estimates)
    if len(estimates) != len(labels) or not estimates:
        raise ValidationError("labels must align one-to-one with a non-empty estimate list")
    vals = [e.mean_boot for e in estimates]
    lows = [e.ci95[0] for e in estimates]
    highs = [e.ci95[1] for e in estimates]
    svg = _bars(vals, lows, highs, list(labels), spec)
    rows = [(lab, e.point, e.mean_boot, e.se_boot, e.ci95[0], e.ci95[1], e.resamples) for lab, e in zip(labels, estimates)]
    return Figure(svg, _csv(("label", "point", "mean_boot", "se_boot", "ci_low", "ci_high", "resamples"), rows))


def render_importance(table, spec: FigureSpec | None = None, top: int | None = None) -> Figure:
    """Vote totals per feature, highest first."""
    spec = spec or FigureSpec("ImportanceBars", y_label="importance score")
    items = table.ranking()[: top or None]
    if not items:
        raise ValidationError("empty importance table")
    svg = _bars([float(v) for _, v in items], None, None, [k for k, _ in items], spec, color="#59a14f")
    rows = [(k, v, table.max_score) for k, v in items]
    return Figure(svg, _csv(("feature", "score", "max_score"), rows))


# ---------------------------------------------------------------------------
# traces


def render_trace(fit, name: str, spec: FigureSpec | None = None) -> Figure:
    """Iteration against stored draws of one parameter, burn-in shaded."""
    spec = spec or FigureSpec("Trace", title=name, x_label="iteration", y_label=name)
    v = fit.column(name)
    if v.size == 0:
        raise ValidationError(f"no draws for {name}")
    cfg = fit.config
    it = cfg.burn_in + cfg.thin * (np.arange(v.size) + 1)
    c = _Canvas(spec.title)
    xa = _Axis(0.0, float(max(it[-1], cfg.burn_in)), LEFT, W - RIGHT, pad=0.0)
    ya = _Axis(float(v.min()), float(v.max()), H - BOTTOM, TOP)
    c.rect(LEFT, TOP, float(xa(cfg.burn_in)) - LEFT, H - BOTTOM - TOP, fill="#dddddd", stroke="none")
    _frame(c, xa, ya, spec.x_label, spec.y_label)
    if v.size == 1:
        c.circle(float(xa(it[0])), float(ya(v[0])), 2.5, "#1f77b4")
    else:
        c.polyline(zip(xa(it).tolist(), ya(v).tolist()), "#1f77b4", 0.8)
    return Figure(c.done(), _csv(("iteration", "value"), [(int(i), float(x)) for i, x in zip(it, v)]))


def render_traces(fit, directory: str | Path) -> list[Path]:
    """One trace figure per parameter; returns the SVG paths."""
    from .jointmodel import _safe

    out = []
    for name in fit.param_names:
        svg, _ = render_trace(fit, name).write(Path(directory) / f"trace_{_safe(name)}")
        out.append(svg)
    return out


# ---------------------------------------------------------------------------
# tables


def metrics_table(metrics: Mapping[str, object]) -> str:
    """CSV of DIC, WAIC, LPML (plus penalties) per model label."""
    rows = [(label, m.DIC, m.pD, m.WAIC, m.pWAIC, m.LPML) for label, m in metrics.items()]
    return _csv(("model", "DIC", "pD", "WAIC", "pWAIC", "LPML"), rows)


def cindex_table(estimates, labels: Sequence[str]) -> str:
    return render_cindex_bars(estimates, labels).csv
