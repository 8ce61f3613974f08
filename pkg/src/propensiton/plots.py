"""Self-contained SVG figures from the CSV outputs.

Coordinates are printed with fixed precision and elements are emitted in a
fixed order, so the same data always gives the same bytes.  Figures are
assembled in memory and written only when complete.
"""
from __future__ import annotations

import csv
import json
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import PlotError

SVG_NS = "http://www.w3.org/2000/svg"
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _f(x: float) -> str:
    return f"{x:.3f}"


# --------------------------------------------------------------------------
# data input


def read_columns(path, required: Sequence[str]) -> dict[str, list[str]]:
    """Columns of a CSV file as strings; raises :class:`PlotError` when empty or incomplete."""
    path = Path(path)
    if not path.exists():
        raise PlotError(f"{path.name}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotError(f"{path.name}: empty file, expected a header with columns {list(required)}")
    header, body = rows[0], rows[1:]
    missing = [c for c in required if c not in header]
    if missing:
        raise PlotError(f"{path.name}: missing columns {missing}; expected {list(required)}")
    if not body:
        raise PlotError(f"{path.name}: no data rows")
    return {h: [r[i] for r in body] for i, h in enumerate(header)}


def _floats(col: Sequence[str]) -> list[float | None]:
    return [float(v) if v != "" else None for v in col]


# --------------------------------------------------------------------------
# drawing


@dataclass
class Series:
    name: str
    x: Sequence[float]
    y: Sequence[float | None]
    dashed: bool = False


@dataclass
class Panel:
    """One set of axes occupying a vertical slice ``(top, bottom)`` of the figure (fractions)."""

    series: list[Series]
    ylabel: str
    logy: bool = False
    slot: tuple[float, float] = (0.0, 1.0)
    vlines: list[tuple[float, str, str]] = field(default_factory=list)  # (x, id, label)
    hline: float | None = None


def _range(vals: list[float], log: bool) -> tuple[float, float]:
    if log:
        vals = [math.log10(v) for v in vals if v > 0]
    if not vals:
        raise PlotError("no plottable values")
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _axes_frame(svg, x0, x1, y0, y1, xr, yr, ylabel, logy, xlabel=None, xticks=None):
    g = ET.SubElement(svg, "g", {"class": "axes"})
    ET.SubElement(g, "rect", {"x": _f(x0), "y": _f(y0), "width": _f(x1 - x0), "height": _f(y1 - y0),
                              "fill": "none", "stroke": "#000"})
    for i in range(5):
        v = yr[0] + (yr[1] - yr[0]) * i / 4
        y = y1 - (y1 - y0) * i / 4
        label = f"1e{v:.1f}" if logy else f"{v:.3g}"
        ET.SubElement(g, "text", {"x": _f(x0 - 6), "y": _f(y + 4), "text-anchor": "end",
                                  "font-size": "10"}).text = label
    ticks = xticks or [(xr[0] + (xr[1] - xr[0]) * i / 4, None) for i in range(5)]
    for v, lab in ticks:
        x = x0 + (x1 - x0) * (v - xr[0]) / (xr[1] - xr[0])
        ET.SubElement(g, "text", {"x": _f(x), "y": _f(y1 + 14), "text-anchor": "middle",
                                  "font-size": "10"}).text = lab if lab is not None else f"{v:.3g}"
    ET.SubElement(g, "text", {"x": _f(x0 - 52), "y": _f((y0 + y1) / 2), "font-size": "11",
                              "transform": f"rotate(-90 {_f(x0 - 52)} {_f((y0 + y1) / 2)})",
                              "text-anchor": "middle"}).text = ylabel
    if xlabel:
        ET.SubElement(g, "text", {"x": _f((x0 + x1) / 2), "y": _f(y1 + 32), "font-size": "11",
                                  "text-anchor": "middle"}).text = xlabel


def _svg_root(title: str) -> ET.Element:
    svg = ET.Element("svg", {"xmlns": SVG_NS, "width": str(WIDTH), "height": str(HEIGHT),
                             "viewBox": f"0 0 {WIDTH} {HEIGHT}"})
    ET.SubElement(svg, "title").text = title
    ET.SubElement(svg, "text", {"x": _f(WIDTH / 2), "y": "20", "text-anchor": "middle",
                                "font-size": "13"}).text = title
    return svg


def line_figure(title: str, panels: list[Panel], xlabel: str) -> ET.Element:
    svg = _svg_root(title)
    xs = [x for p in panels for s in p.series for x, y in zip(s.x, s.y) if y is not None]
    xr = _range(xs, False)
    left, right = MARGIN["left"], WIDTH - MARGIN["right"]
    top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    for pi, panel in enumerate(panels):
        y0 = top + (bottom - top) * panel.slot[0]
        y1 = top + (bottom - top) * panel.slot[1] - (12 if pi < len(panels) - 1 else 0)
        ys = [y for s in panel.series for y in s.y if y is not None]
        yr = _range(ys + ([panel.hline] if panel.hline is not None else []), panel.logy)
        _axes_frame(svg, left, right, y0, y1, xr, yr, panel.ylabel, panel.logy,
                    xlabel if pi == len(panels) - 1 else None)

        def X(x):
            return left + (right - left) * (x - xr[0]) / (xr[1] - xr[0])

        def Y(y):
            v = math.log10(y) if panel.logy else y
            return y1 - (y1 - y0) * (v - yr[0]) / (yr[1] - yr[0])

        if panel.hline is not None:
            ET.SubElement(svg, "line", {"x1": _f(left), "x2": _f(right), "y1": _f(Y(panel.hline)),
                                        "y2": _f(Y(panel.hline)), "stroke": "#999", "stroke-width": "0.5"})
        for si, s in enumerate(panel.series):
            pts = [(X(x), Y(y)) for x, y in zip(s.x, s.y) if y is not None and (y > 0 or not panel.logy)]
            attrs = {"id": s.name, "fill": "none", "stroke": COLORS[si % len(COLORS)], "stroke-width": "1.5",
                     "points": " ".join(f"{_f(a)},{_f(b)}" for a, b in pts)}
            if s.dashed:
                attrs["stroke-dasharray"] = "6 4"
            ET.SubElement(svg, "polyline", attrs)
            ET.SubElement(svg, "text", {"x": _f(right - 150), "y": _f(y0 + 14 + 13 * si), "font-size": "10",
                                        "fill": COLORS[si % len(COLORS)]}).text = s.name
        for x, ident, label in panel.vlines:
            g = ET.SubElement(svg, "g", {"id": ident if pi == 0 else f"{ident}-{pi}"})
            ET.SubElement(g, "line", {"x1": _f(X(x)), "x2": _f(X(x)), "y1": _f(y0), "y2": _f(y1),
                                      "stroke": "#555", "stroke-dasharray": "2 3"})
            ET.SubElement(g, "text", {"x": _f(X(x) + 4), "y": _f(y1 - 6), "font-size": "10"}).text = label
    return svg


def bar_figure(title: str, labels: Sequence[str], panels: list[tuple[str, Sequence[float | None]]],
               xlabel: str) -> ET.Element:
    """One bar panel per ``(ylabel, values)``; missing values leave a gap."""
    svg = _svg_root(title)
    n = len(labels)
    left, right = MARGIN["left"], WIDTH - MARGIN["right"]
    top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    xr = (-0.5, n - 0.5)
    for pi, (ylabel, vals) in enumerate(panels):
        y0 = top + (bottom - top) * pi / len(panels)
        y1 = top + (bottom - top) * (pi + 1) / len(panels) - (12 if pi < len(panels) - 1 else 0)
        present = [v for v in vals if v is not None]
        hi = max(present + [0.0]) or 1.0
        yr = (0.0, 1.05 * hi)
        _axes_frame(svg, left, right, y0, y1, xr, yr, ylabel, False,
                    xlabel if pi == len(panels) - 1 else None,
                    [(i, lab) for i, lab in enumerate(labels)] if pi == len(panels) - 1 else [])
        g = ET.SubElement(svg, "g", {"id": f"bars-{pi}"})
        w = 0.6 * (right - left) / n
        for i, v in enumerate(vals):
            if v is None:
                continue
            xc = left + (right - left) * (i + 0.5) / n
            h = (y1 - y0) * v / yr[1]
            ET.SubElement(g, "rect", {"x": _f(xc - w / 2), "y": _f(y1 - h), "width": _f(w), "height": _f(h),
                                      "fill": COLORS[pi % len(COLORS)]})
    return svg


def write_svg(svg: ET.Element, path) -> None:
    ET.indent(svg)
    text = ET.tostring(svg, encoding="unicode")
    tmp = Path(str(path) + ".tmp")
    tmp.write_text('<?xml version="1.0" encoding="UTF-8"?>\n' + text + "\n", encoding="utf-8")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# figures for each output file


def survival_figure(curves_csv, stats_json=None) -> ET.Element:
    cols = read_columns(curves_csv, ("t", "P_oqt", "fit_oqt", "residual_oqt"))
    t = _floats(cols["t"])
    top, resid = [], []
    for mode in ("oqt", "pqt"):
        if f"P_{mode}" in cols:
            top.append(Series(f"survival-{mode}", t, _floats(cols[f"P_{mode}"])))
            if f"fit_{mode}" in cols:
                top.append(Series(f"fit-{mode}", t, _floats(cols[f"fit_{mode}"]), dashed=True))
            if f"residual_{mode}" in cols:
                resid.append(Series(f"residual-{mode}", t, _floats(cols[f"residual_{mode}"])))
    vlines = []
    if stats_json is not None and Path(stats_json).exists():
        ref = json.loads(Path(stats_json).read_text()).get("oqt_reference", {})
        if ref.get("t_star") is not None:
            vlines.append((float(ref["t_star"]), "t-star", "t*"))
    panels = [Panel(top, "survival P(t)", logy=True, slot=(0.0, 0.65), vlines=vlines),
              Panel(resid, "P / fit - 1", slot=(0.65, 1.0), vlines=vlines, hline=0.0)]
    return line_figure("Survival probability", panels, "t")


def fringe_figure(fringes_csv) -> ET.Element:
    cols = read_columns(fringes_csv, ("x", "I_ensemble", "I_oqt"))
    x = _floats(cols["x"])
    return line_figure("Recombiner fringes", [Panel([Series("intensity-ensemble", x, _floats(cols["I_ensemble"])),
                                                      Series("intensity-oqt", x, _floats(cols["I_oqt"]),
                                                             dashed=True)], "intensity")], "x")


def scan_figure(scan_csv) -> ET.Element:
    cols = read_columns(scan_csv, ("epsilon", "mean_collapse_time", "deviation"))
    labels = [f"{float(e):.0e}" if float(e) > 0 else "0" for e in cols["epsilon"]]
    return bar_figure("Epsilon scan", labels, [("mean collapse time", _floats(cols["mean_collapse_time"])),
                                              ("deviation from oqt", _floats(cols["deviation"]))], "epsilon")


FIGURES = {
    "curves.csv": ("survival.svg", lambda d: survival_figure(d / "curves.csv", d / "stats.json")),
    "fringes.csv": ("fringes.svg", lambda d: fringe_figure(d / "fringes.csv")),
    "scan.csv": ("scan.svg", lambda d: scan_figure(d / "scan.csv")),
}


def emit_plots(directory) -> list[Path]:
    """Render every figure whose data file exists in ``directory``; returns the SVG paths."""
    d = Path(directory)
    todo = [name for name in FIGURES if (d / name).exists()]
    if not todo:
        raise PlotError(f"{d}: no plottable data files (expected one of {sorted(FIGURES)})")
    figs = [(d / FIGURES[name][0], FIGURES[name][1](d)) for name in todo]
    for path, svg in figs:
        write_svg(svg, path)
    return [p for p, _ in figs]
