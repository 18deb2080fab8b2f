"""Minimal SVG line plots: one ``<polyline>`` per series plus a legend."""
import logging

from typing import NamedTuple
from typing import Sequence
from xml.etree import ElementTree

import numpy as np


logger = logging.getLogger(__name__)


WIDTH = 640
HEIGHT = 480
MARGIN = 40
LEGEND_ROW = 18
PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


class Series(NamedTuple):
    name: str
    points: np.ndarray
    color: str = ""


def _fmt(value: float) -> str:
    return "%.6f" % value


def render_svg(series: Sequence[Series], title: str = "", equal_aspect: bool = True) -> str:
    """Render the series into an SVG document.

    With ``equal_aspect`` both axes share one scale, as for paths in the
    plane. The y axis points up.
    """
    if not series:
        raise ValueError("Nothing to plot")
    stacked = np.vstack([np.asarray(s.points, dtype=float).reshape(-1, 2) for s in series])
    low = stacked.min(axis=0)
    span = np.maximum(stacked.max(axis=0) - low, 1e-9)
    scale = np.array([(WIDTH - 2 * MARGIN) / span[0], (HEIGHT - 2 * MARGIN) / span[1]])
    if equal_aspect:
        scale[:] = scale.min()

    root = ElementTree.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(WIDTH),
            "height": str(HEIGHT),
            "viewBox": f"0 0 {WIDTH} {HEIGHT}",
        },
    )
    if title:
        ElementTree.SubElement(root, "title").text = title
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        xy = np.asarray(s.points, dtype=float).reshape(-1, 2)
        px = MARGIN + (xy[:, 0] - low[0]) * scale[0]
        py = HEIGHT - MARGIN - (xy[:, 1] - low[1]) * scale[1]
        ElementTree.SubElement(
            root,
            "polyline",
            {
                "class": "series",
                "data-name": s.name,
                "fill": "none",
                "stroke": color,
                "stroke-width": "2",
                "points": " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py)),
            },
        )
        label = ElementTree.SubElement(
            root,
            "text",
            {
                "x": str(MARGIN),
                "y": str(MARGIN // 2 + i * LEGEND_ROW),
                "fill": color,
                "font-size": "14",
            },
        )
        label.text = s.name
    return ElementTree.tostring(root, encoding="unicode")


def write_svg(
    path: str, series: Sequence[Series], title: str = "", equal_aspect: bool = True
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_svg(series, title, equal_aspect))
        f.write("\n")
