"""Static SVG rendering of tidy tables.

Output is plain SVG 1.1 written by hand with fixed ``%.2f`` coordinates, so a
given input always renders to the same bytes. Heatmaps use a blue-white-red
diverging ramp centred on zero and scaled by the largest absolute value.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from .inspect import add_confint

KINDS = ("basis_curves", "penalty_heatmap", "smooth_1d_ribbon", "smooth_2d_heatmap",
         "appraise_grid")

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d",
           "#666666", "#1f78b4", "#b2df8a")
_BLUE = np.array([33, 102, 172])
_WHITE = np.array([247, 247, 247])
_RED = np.array([178, 24, 43])
_MARGIN = (50.0, 20.0, 30.0, 45.0)  # left, right, top, bottom


class PlotError(ValueError):
    """The data cannot be drawn as the requested kind."""


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    width: int = 640
    height: int = 480
    path: str | None = None
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown plot kind '{self.kind}'; expected one of {KINDS}")
        if self.width < 100 or self.height < 100:
            raise PlotError("plots must be at least 100 x 100 px")


def diverging_color(value: float, limit: float) -> str:
    """Hex colour for ``value`` on a ramp spanning ``[-limit, limit]``."""
    t = 0.0 if limit <= 0 else float(np.clip(value / limit, -1.0, 1.0))
    end = _RED if t > 0 else _BLUE
    rgb = np.rint(_WHITE + abs(t) * (end - _WHITE)).astype(int)
    return "#%02x%02x%02x" % tuple(rgb)


def _f(v: float) -> str:
    return "%.2f" % v


def _tick(v: float) -> str:
    s = "%.3g" % v
    return "0" if s == "-0" else s


@dataclass
class _Panel:
    """Maps data coordinates into a pixel box."""

    x0: float
    y0: float
    w: float
    h: float
    xlim: tuple[float, float]
    ylim: tuple[float, float]

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x, dtype=float) - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (np.asarray(y, dtype=float) - lo) / (hi - lo) * self.h


def _limits(*arrays) -> tuple[float, float]:
    v = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.04
    return lo - pad, hi + pad


def _panel(x0, y0, w, h, xlim, ylim) -> _Panel:
    left, right, top, bottom = _MARGIN
    return _Panel(x0 + left, y0 + top, w - left - right, h - top - bottom, xlim, ylim)


def _axes(p: _Panel, xlabel: str, ylabel: str, title: str = "") -> list[str]:
    out = [
        '<line class="axis" x1="%s" y1="%s" x2="%s" y2="%s" stroke="#000000"/>'
        % (_f(p.x0), _f(p.y0 + p.h), _f(p.x0 + p.w), _f(p.y0 + p.h)),
        '<line class="axis" x1="%s" y1="%s" x2="%s" y2="%s" stroke="#000000"/>'
        % (_f(p.x0), _f(p.y0), _f(p.x0), _f(p.y0 + p.h)),
    ]
    for v in np.linspace(*p.xlim, 5):
        x = p.px(v)
        out.append('<line class="tick" x1="%s" y1="%s" x2="%s" y2="%s" stroke="#000000"/>'
                   % (_f(x), _f(p.y0 + p.h), _f(x), _f(p.y0 + p.h + 4)))
        out.append('<text x="%s" y="%s" font-size="9" text-anchor="middle">%s</text>'
                   % (_f(x), _f(p.y0 + p.h + 14), _tick(v)))
    for v in np.linspace(*p.ylim, 5):
        y = p.py(v)
        out.append('<line class="tick" x1="%s" y1="%s" x2="%s" y2="%s" stroke="#000000"/>'
                   % (_f(p.x0 - 4), _f(y), _f(p.x0), _f(y)))
        out.append('<text x="%s" y="%s" font-size="9" text-anchor="end">%s</text>'
                   % (_f(p.x0 - 6), _f(y + 3), _tick(v)))
    out.append('<text x="%s" y="%s" font-size="11" text-anchor="middle">%s</text>'
               % (_f(p.x0 + p.w / 2), _f(p.y0 + p.h + 32), escape(xlabel)))
    out.append('<text x="%s" y="%s" font-size="11" text-anchor="middle" '
               'transform="rotate(-90 %s %s)">%s</text>'
               % (_f(p.x0 - 38), _f(p.y0 + p.h / 2), _f(p.x0 - 38), _f(p.y0 + p.h / 2),
                  escape(ylabel)))
    if title:
        out.append('<text x="%s" y="%s" font-size="12" text-anchor="middle">%s</text>'
                   % (_f(p.x0 + p.w / 2), _f(p.y0 - 8), escape(title)))
    return out


def _points(xs, ys) -> str:
    return " ".join("%s,%s" % (_f(a), _f(b)) for a, b in zip(xs, ys))


def _polyline(p: _Panel, x, y, color: str, cls: str = "curve", width: float = 1.5) -> str:
    return ('<polyline class="%s" fill="none" stroke="%s" stroke-width="%s" points="%s"/>'
            % (cls, color, _f(width), _points(p.px(x), p.py(y))))


def _circles(p: _Panel, x, y, color: str = "#333333") -> list[str]:
    return ['<circle class="point" cx="%s" cy="%s" r="1.50" fill="%s"/>' % (_f(a), _f(b), color)
            for a, b in zip(p.px(x), p.py(y))]


def _band(p: _Panel, x, lo, hi, color: str = "#9ecae1") -> str:
    xs = np.concatenate([x, x[::-1]])
    ys = np.concatenate([lo, hi[::-1]])
    return ('<polygon class="band" fill="%s" fill-opacity="0.60" stroke="none" points="%s"/>'
            % (color, _points(p.px(xs), p.py(ys))))


def _legend(x: float, y: float, h: float, limit: float) -> list[str]:
    steps = 11
    out = []
    cell = h / steps
    for i, v in enumerate(np.linspace(limit, -limit, steps)):
        out.append('<rect class="legend" x="%s" y="%s" width="12.00" height="%s" fill="%s"/>'
                   % (_f(x), _f(y + i * cell), _f(cell), diverging_color(v, limit)))
    for v, yy in ((limit, y), (0.0, y + h / 2), (-limit, y + h)):
        out.append('<text x="%s" y="%s" font-size="9">%s</text>' % (_f(x + 16), _f(yy + 3), _tick(v)))
    return out


def _require(df, cols, kind):
    if not isinstance(df, pd.DataFrame):
        raise PlotError(f"{kind} needs a table")
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise PlotError(f"{kind} needs columns {missing}")


def _covariates(df) -> list[str]:
    return [c for c in df.columns if not c.startswith(".")]


def _basis_curves(df, spec) -> list[str]:
    _require(df, [".bf", ".value"], spec.kind)
    covs = _covariates(df)
    if len(covs) != 1:
        raise PlotError("basis_curves needs exactly one covariate column")
    x = covs[0]
    p = _panel(0, 0, spec.width, spec.height, _limits(df[x]), _limits(df[".value"]))
    out = _axes(p, x, "basis function value", spec.title)
    for i, (_, g) in enumerate(df.groupby(".bf", sort=True)):
        out.append(_polyline(p, g[x].to_numpy(), g[".value"].to_numpy(), PALETTE[i % len(PALETTE)]))
    return out


def _penalty_heatmap(df, spec) -> list[str]:
    _require(df, [".row", ".col", ".value"], spec.kind)
    labels = list(dict.fromkeys(df[".row"]))
    K = len(labels)
    if len(df) != K * K:
        raise PlotError("penalty_heatmap needs a complete square matrix")
    index = {lab: i for i, lab in enumerate(labels)}
    limit = float(np.max(np.abs(df[".value"]))) if K else 0.0
    left, top = 60.0, 30.0
    size = min(spec.width - left - 70.0, spec.height - top - 20.0)
    cell = size / max(K, 1)
    out = []
    if spec.title:
        out.append('<text x="%s" y="18.00" font-size="12" text-anchor="middle">%s</text>'
                   % (_f(left + size / 2), escape(spec.title)))
    for r, c, v in zip(df[".row"], df[".col"], df[".value"]):
        out.append('<rect class="cell" x="%s" y="%s" width="%s" height="%s" fill="%s"/>'
                   % (_f(left + index[c] * cell), _f(top + index[r] * cell), _f(cell), _f(cell),
                      diverging_color(v, limit)))
    for lab, i in index.items():
        out.append('<text x="%s" y="%s" font-size="8" text-anchor="end">%s</text>'
                   % (_f(left - 4), _f(top + (i + 0.5) * cell + 3), escape(str(lab))))
    out.extend(_legend(left + size + 15, top, size, limit))
    return out


def _ribbon(df, spec) -> list[str]:
    _require(df, [".estimate", ".se"], spec.kind)
    covs = _covariates(df)
    if len(covs) != 1 or df[covs[0]].isna().any():
        raise PlotError("smooth_1d_ribbon needs exactly one covariate column")
    if ".lower_ci" not in df:
        df = add_confint(df)
    df = df.sort_values(covs[0], kind="mergesort")
    x = df[covs[0]].to_numpy()
    lo, hi, est = (df[c].to_numpy() for c in (".lower_ci", ".upper_ci", ".estimate"))
    p = _panel(0, 0, spec.width, spec.height, _limits(x), _limits(lo, hi))
    out = _axes(p, covs[0], "partial effect", spec.title)
    out.append(_band(p, x, lo, hi))
    out.append(_polyline(p, x, est, "#08306b", "estimate", 2.0))
    return out


def _heatmap2d(df, spec) -> list[str]:
    _require(df, [".estimate"], spec.kind)
    covs = [c for c in _covariates(df) if df[c].notna().all()]
    if len(covs) != 2:
        raise PlotError("smooth_2d_heatmap needs exactly two covariate columns")
    xa, ya = covs
    xs, ys = np.unique(df[xa]), np.unique(df[ya])
    if len(xs) < 2 or len(ys) < 2:
        raise PlotError("smooth_2d_heatmap needs a grid with at least two values per axis")
    dx, dy = np.min(np.diff(xs)), np.min(np.diff(ys))
    p = _panel(0, 0, spec.width - 60, spec.height,
               (xs[0] - dx / 2, xs[-1] + dx / 2), (ys[0] - dy / 2, ys[-1] + dy / 2))
    limit = float(np.max(np.abs(df[".estimate"])))
    out = []
    w = dx / (p.xlim[1] - p.xlim[0]) * p.w
    h = dy / (p.ylim[1] - p.ylim[0]) * p.h
    for a, b, v in zip(df[xa], df[ya], df[".estimate"]):
        out.append('<rect class="cell" x="%s" y="%s" width="%s" height="%s" fill="%s"/>'
                   % (_f(p.px(a - dx / 2)), _f(p.py(b + dy / 2)), _f(w), _f(h),
                      diverging_color(v, limit)))
    out.extend(_axes(p, xa, ya, spec.title))
    out.extend(_legend(p.x0 + p.w + 15, p.y0, p.h, limit))
    return out


def _appraise(tables, spec) -> list[str]:
    if not isinstance(tables, dict) or set(tables) != {"qq", "resid_vs_eta", "histogram", "obs_vs_fit"}:
        raise PlotError("appraise_grid needs the four appraisal tables")
    W, H = spec.width / 2, spec.height / 2
    out = []
    qq = tables["qq"]
    _require(qq, ["theoretical", "sample", "band_lower", "band_upper"], "qq panel")
    t = qq["theoretical"].to_numpy()
    lim = _limits(t, qq["sample"], qq["band_lower"], qq["band_upper"])
    p = _panel(0, 0, W, H, _limits(t), lim)
    out.extend(_axes(p, "theoretical quantiles", "deviance residuals", "QQ plot"))
    out.append(_band(p, t, qq["band_lower"].to_numpy(), qq["band_upper"].to_numpy()))
    out.append(_polyline(p, np.array(p.xlim), np.array(p.xlim), "#cb181d", "reference", 1.0))
    out.extend(_circles(p, t, qq["sample"]))

    rv = tables["resid_vs_eta"]
    _require(rv, [".eta", ".residual"], "residual panel")
    p = _panel(W, 0, W, H, _limits(rv[".eta"]), _limits(rv[".residual"]))
    out.extend(_axes(p, "linear predictor", "residuals", "Residuals vs linear predictor"))
    out.extend(_circles(p, rv[".eta"], rv[".residual"]))

    hist = tables["histogram"]
    _require(hist, ["bin_left", "bin_right", "count"], "histogram panel")
    p = _panel(0, H, W, H, (float(hist["bin_left"].min()), float(hist["bin_right"].max())),
               (0.0, max(float(hist["count"].max()), 1.0) * 1.05))
    out.extend(_axes(p, "residuals", "count", "Histogram of residuals"))
    for a, b, c in zip(hist["bin_left"], hist["bin_right"], hist["count"]):
        out.append('<rect class="bar" x="%s" y="%s" width="%s" height="%s" fill="#9ecae1" '
                   'stroke="#08306b" stroke-width="0.50"/>'
                   % (_f(p.px(a)), _f(p.py(c)), _f(p.px(b) - p.px(a)), _f(p.py(0) - p.py(c))))

    of = tables["obs_vs_fit"]
    _require(of, [".fitted", ".observed"], "observed panel")
    p = _panel(W, H, W, H, _limits(of[".fitted"]), _limits(of[".observed"]))
    out.extend(_axes(p, "fitted values", "response", "Observed vs fitted values"))
    out.extend(_circles(p, of[".fitted"], of[".observed"]))
    return out


_DRAW = {
    "basis_curves": _basis_curves,
    "penalty_heatmap": _penalty_heatmap,
    "smooth_1d_ribbon": _ribbon,
    "smooth_2d_heatmap": _heatmap2d,
    "appraise_grid": _appraise,
}


def render_svg(data, spec: PlotSpec) -> str:
    """Render ``data`` as ``spec.kind``; also written to ``spec.path`` when set."""
    body = _DRAW[spec.kind](data, spec)
    head = ('<?xml version="1.0" encoding="UTF-8"?>\n'
            '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="%d" height="%d" '
            'viewBox="0 0 %d %d">\n' % (spec.width, spec.height, spec.width, spec.height))
    bg = '<rect class="background" x="0" y="0" width="%d" height="%d" fill="#ffffff"/>\n' % (
        spec.width, spec.height)
    svg = head + bg + "\n".join(body) + "\n</svg>\n"
    if spec.path:
        Path(spec.path).write_text(svg, encoding="utf-8")
    return svg
