"""Minimal SVG emission: domain outlines, curves, cell sets and markers.

Output is plain text built with fixed float formatting so that identical
inputs give identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .geometry import DomainSpec, GridMask, Polyline

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _f(v: float) -> str:
    return f"{v:.5f}"


class Canvas:
    """World-coordinate canvas; y points up as in the plane."""

    def __init__(self, bbox: tuple[float, float, float, float], width: int = 600, margin: float = 0.05):
        xmin, ymin, xmax, ymax = bbox
        dx, dy = xmax - xmin, ymax - ymin
        pad = margin * max(dx, dy)
        self.xmin, self.ymin = xmin - pad, ymin - pad
        self.xmax, self.ymax = xmax + pad, ymax + pad
        self.width = width
        self.scale = width / (self.xmax - self.xmin)
        self.height = int(round((self.ymax - self.ymin) * self.scale))
        self.items: list[str] = []

    def _xy(self, x, y):
        return (np.asarray(x) - self.xmin) * self.scale, (self.ymax - np.asarray(y)) * self.scale

    def polyline(self, pts, color: str = "black", width: float = 1.5, closed: bool = False,
                 fill: str = "none", opacity: float = 1.0) -> None:
        pts = np.asarray(pts, dtype=float)
        if len(pts) == 0:
            return
        X, Y = self._xy(pts[:, 0], pts[:, 1])
        coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(X, Y))
        tag = "polygon" if closed else "polyline"
        self.items.append(f'<{tag} points="{coords}" fill="{fill}" fill-opacity="{opacity}" '
                          f'stroke="{color}" stroke-width="{width}"/>')

    def segment(self, a, b, color: str = "black", width: float = 1.5) -> None:
        self.polyline([a, b], color, width)

    def cells(self, mask: GridMask, flat: np.ndarray, color: str, opacity: float = 0.6) -> None:
        flat = np.asarray(flat, dtype=np.int64)
        if flat.size == 0:
            return
        cx, cy = mask.centers(np.sort(flat))
        s = mask.h * self.scale
        X, Y = self._xy(cx - mask.h / 2, cy + mask.h / 2)
        for a, b in zip(X, Y):
            self.items.append(f'<rect x="{_f(a)}" y="{_f(b)}" width="{_f(s)}" height="{_f(s)}" '
                              f'fill="{color}" fill-opacity="{opacity}" stroke="none"/>')

    def point(self, p, color: str = "black", r: float = 3.0) -> None:
        X, Y = self._xy(p[0], p[1])
        self.items.append(f'<circle cx="{_f(X)}" cy="{_f(Y)}" r="{r}" fill="{color}"/>')

    def text(self, p, s: str, size: int = 12) -> None:
        X, Y = self._xy(p[0], p[1])
        self.items.append(f'<text x="{_f(X)}" y="{_f(Y)}" font-size="{size}" '
                          f'font-family="sans-serif">{escape(s)}</text>')

    def render(self, title: str = "") -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        body = [head]
        if title:
            body.append(f"<title>{escape(title)}</title>")
        body.append(f'<rect width="{self.width}" height="{self.height}" fill="white"/>')
        body.extend(self.items)
        body.append("</svg>")
        return "\n".join(body) + "\n"

    def save(self, path: str | Path, title: str = "") -> Path:
        path = Path(path)
        path.write_text(self.render(title))
        return path


def outline(domain: DomainSpec, h: float) -> np.ndarray:
    """Outer boundary polygon; cuts are drawn separately."""
    try:
        return domain.boundary_polygon(h)
    except NotImplementedError:
        pass
    if hasattr(domain, "radius"):  # slit disks and fans: the outer circle
        r = domain.radius
        n = max(16, int(math.ceil(2 * math.pi * r / h)))
        t = 2 * math.pi * np.arange(n) / n
        return np.column_stack([r * np.cos(t), r * np.sin(t)])
    xmin, ymin, xmax, ymax = domain.bbox()
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])


def domain_canvas(domain: DomainSpec, h: float, width: int = 600) -> Canvas:
    """Canvas showing the outer boundary and the cuts of ``domain``."""
    c = Canvas(domain.bbox(), width)
    c.polyline(outline(domain, h), "black", 1.5, closed=True)
    for s in domain.cuts():
        c.segment(s.a, s.b, "black", 1.5)
    return c


def curves_svg(path, domain: DomainSpec, h: float, curves: list[Polyline], title: str = "") -> Path:
    """Optimizing curves over the domain outline."""
    c = domain_canvas(domain, h)
    for i, cv in enumerate(curves):
        col = PALETTE[i % len(PALETTE)]
        c.polyline(cv.array, col, 1.5)
        c.point(cv.vertices[0], col)
        c.point(cv.vertices[-1], col)
    return c.save(path, title)


def cells_svg(path, domain: DomainSpec, mask: GridMask, sets: list[np.ndarray],
              points: list = (), title: str = "") -> Path:
    """Cell sets (impressions, exceptional sets) shaded over the outline."""
    c = domain_canvas(domain, mask.h)
    for i, s in enumerate(sets):
        c.cells(mask, s, PALETTE[i % len(PALETTE)], 0.5)
    for p in points:
        c.point(p, "black", 2.0)
    return c.save(path, title)
