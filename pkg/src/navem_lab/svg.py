"""Minimal log-log convergence plots as standalone SVG documents."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
W, H = 640, 480
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 30, 60


def fitted_slope(h, err):
    """Least-squares slope of log(err) against log(h)."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    ok = (h > 0) & (err > 0) & np.isfinite(err)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


def _decades(lo, hi):
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return a, b


def convergence_svg(series, title="convergence"):
    """SVG text for ``series = {method: (h, err0, errgrad)}``.

    ``err0`` curves are solid, ``errgrad`` curves dashed; the legend carries
    the fitted slopes and the raw data is embedded as a comment.
    """
    pts = [v for h, e0, e1 in series.values() for v in (*e0, *e1) if v > 0 and math.isfinite(v)]
    hs = [v for h, _, _ in series.values() for v in h if v > 0]
    if not pts or not hs:
        raise ValueError("nothing to plot")
    xa, xb = _decades(min(hs), max(hs))
    ya, yb = _decades(min(pts), max(pts))
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(h):
        return LEFT + (math.log10(h) - xa) / (xb - xa) * pw

    def py(e):
        return TOP + (yb - math.log10(e)) / (yb - ya) * ph

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(W), height=str(H),
                     viewBox=f"0 0 {W} {H}")
    rows = ["method,h,err0,errgrad"]
    for m, (h, e0, e1) in series.items():
        rows += [f"{m},{a!r},{b!r},{c!r}" for a, b, c in zip(h, e0, e1)]
    svg.append(ET.Comment("\n" + "\n".join(rows) + "\n"))
    ET.SubElement(svg, "rect", x="0", y="0", width=str(W), height=str(H), fill="white")
    ET.SubElement(svg, "text", x=str(W // 2), y="20", attrib={"text-anchor": "middle", "font-size": "14"}).text = title
    ET.SubElement(svg, "rect", x=str(LEFT), y=str(TOP), width=str(pw), height=str(ph), fill="none", stroke="black")
    for k in range(xa, xb + 1):
        x = px(10.0 ** k)
        ET.SubElement(svg, "line", x1=f"{x:.2f}", y1=str(TOP + ph), x2=f"{x:.2f}", y2=str(TOP + ph + 5), stroke="black")
        ET.SubElement(svg, "text", x=f"{x:.2f}", y=str(TOP + ph + 20),
                      attrib={"text-anchor": "middle", "font-size": "11"}).text = f"1e{k}"
    for k in range(ya, yb + 1):
        y = py(10.0 ** k)
        ET.SubElement(svg, "line", x1=str(LEFT - 5), y1=f"{y:.2f}", x2=str(LEFT), y2=f"{y:.2f}", stroke="black")
        ET.SubElement(svg, "text", x=str(LEFT - 8), y=f"{y + 4:.2f}",
                      attrib={"text-anchor": "end", "font-size": "11"}).text = f"1e{k}"
    ET.SubElement(svg, "text", x=str(LEFT + pw // 2), y=str(H - 15), attrib={"text-anchor": "middle"}).text = "h"
    ly = TOP + 10
    for i, (m, (h, e0, e1)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        for errs, dash, label in ((e0, None, "err0"), (e1, "6,4", "errgrad")):
            good = [(a, b) for a, b in zip(h, errs) if b > 0 and math.isfinite(b)]
            if len(good) >= 1:
                attrs = {"fill": "none", "stroke": color, "stroke-width": "1.5",
                         "points": " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in good)}
                if dash:
                    attrs["stroke-dasharray"] = dash
                ET.SubElement(svg, "polyline", attrib=attrs)
            s = fitted_slope(h, errs)
            ET.SubElement(svg, "text", x=str(W - RIGHT + 10), y=str(ly), fill=color,
                          attrib={"font-size": "11"}).text = f"{m} {label} slope {s:.2f}"
            ly += 16
    return ET.tostring(svg, encoding="unicode")
