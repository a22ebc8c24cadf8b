"""Plane domains, plates, curves and their rasterization onto uniform grids.

Grid convention: cell ``(i, j)`` of a :class:`GridMask` is the closed square of
side ``h`` centred at ``origin + (i*h, j*h)``, and the origin is always an
integer multiple of ``h``.  Every cell centre therefore sits on the lattice
``h * Z^2``, which puts the comb teeth and the fan slits exactly through cell
centres.

Cell sets are passed around as sorted ``int64`` arrays of flat indices
``i * ny + j``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import ClassVar, Iterable, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import CurveEscapesDomain, EmptyPlate, UnresolvedFeature

EXTERIOR, INTERIOR, BOUNDARY, PLATE0, PLATE1 = 0, 1, 2, 3, 4
LABELS = {EXTERIOR: "exterior", INTERIOR: "interior", BOUNDARY: "boundary",
          PLATE0: "plate0", PLATE1: "plate1"}

# Relative slack on closed/open square tests; keeps lattice-aligned features exact.
_SQ_TOL = 1e-9
_MIN_CELLS = 3.0


class Point(NamedTuple):
    x: float
    y: float


def as_point(p) -> Point:
    if isinstance(p, Point):
        return p
    x, y = p
    return Point(float(x), float(y))


@dataclass(frozen=True)
class Polyline:
    """Ordered vertices of a curve.

    A single vertex is accepted as the degenerate curve joining a point to
    itself; otherwise consecutive vertices must be distinct.
    """

    vertices: tuple[Point, ...]

    def __post_init__(self):
        verts = tuple(as_point(v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) == 0:
            raise ValueError("polyline needs at least one vertex")
        arr = np.asarray(verts, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("polyline vertices must be finite")
        if len(verts) > 1 and np.any(np.all(np.diff(arr, axis=0) == 0.0, axis=1)):
            raise ValueError("consecutive polyline vertices must be distinct")

    @classmethod
    def from_array(cls, arr) -> "Polyline":
        arr = np.asarray(arr, dtype=float).reshape(-1, 2)
        return cls(tuple(Point(float(a), float(b)) for a, b in arr))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float).reshape(-1, 2)

    @property
    def degenerate(self) -> bool:
        return len(self.vertices) == 1

    @property
    def length(self) -> float:
        if self.degenerate:
            return 0.0
        return float(np.sum(np.hypot(*np.diff(self.array, axis=0).T)))

    def reversed(self) -> "Polyline":
        return Polyline(self.vertices[::-1])

    def concat(self, other: "Polyline") -> "Polyline":
        """Join two curves sharing an endpoint (the shared vertex is kept once)."""
        if self.vertices[-1] != other.vertices[0]:
            raise ValueError("curves do not share an endpoint")
        return Polyline(self.vertices + other.vertices[1:])


# ---------------------------------------------------------------------------
# Cell/shape intersection primitives (vectorized over cell centres)
# ---------------------------------------------------------------------------


def _linf_to_segment(cx, cy, a: Point, b: Point) -> np.ndarray:
    """Chebyshev distance from points to the closed segment [a, b]."""
    px = np.asarray(cx, dtype=float) - a.x
    py = np.asarray(cy, dtype=float) - a.y
    dx, dy = b.x - a.x, b.y - a.y
    cands = [np.zeros_like(px), np.ones_like(px)]
    with np.errstate(divide="ignore", invalid="ignore"):
        for num, den in ((px, dx), (py, dy), (px - py, dx - dy), (px + py, dx + dy)):
            if den != 0.0:
                cands.append(np.clip(num / den, 0.0, 1.0))
    best = np.full(px.shape, np.inf)
    for t in cands:
        d = np.maximum(np.abs(px - t * dx), np.abs(py - t * dy))
        np.minimum(best, d, out=best)
    return best


def _dist_to_segment(x, y, a: Point, b: Point) -> np.ndarray:
    """Euclidean distance from points to the closed segment [a, b]."""
    px = np.asarray(x, dtype=float) - a.x
    py = np.asarray(y, dtype=float) - a.y
    dx, dy = b.x - a.x, b.y - a.y
    L2 = dx * dx + dy * dy
    t = np.clip((px * dx + py * dy) / L2, 0.0, 1.0) if L2 > 0 else np.zeros_like(px)
    return np.hypot(px - t * dx, py - t * dy)


def _dist_to_polygon(x, y, verts: np.ndarray) -> np.ndarray:
    d = np.full(np.shape(x), np.inf)
    n = len(verts)
    for k in range(n):
        np.minimum(d, _dist_to_segment(x, y, Point(*verts[k]), Point(*verts[(k + 1) % n])), out=d)
    return d


def _points_in_polygon(x, y, verts: np.ndarray) -> np.ndarray:
    """Even-odd rule; points exactly on an edge may land either way."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = np.zeros(x.shape, dtype=bool)
    x1, y1 = verts[:, 0], verts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for k in range(len(verts)):
        if y1[k] == y2[k]:
            continue
        crosses = (y1[k] > y) != (y2[k] > y)
        xint = (x2[k] - x1[k]) * (y - y1[k]) / (y2[k] - y1[k]) + x1[k]
        inside ^= crosses & (x < xint)
    return inside


# ---------------------------------------------------------------------------
# Plate / region geometry elements
# ---------------------------------------------------------------------------


class Shape:
    """A closed plane set that can report which grid squares it meets."""

    type: ClassVar[str] = ""

    def bbox(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def covers(self, cx, cy, h: float) -> np.ndarray:
        """True where the closed square of side ``h`` at ``(cx, cy)`` meets the shape."""
        raise NotImplementedError

    def contains(self, x, y) -> np.ndarray:
        """Closed-set membership of points (used for V membership of cell centres)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Segment(Shape):
    a: Point
    b: Point
    type: ClassVar[str] = "segment"

    def __post_init__(self):
        object.__setattr__(self, "a", as_point(self.a))
        object.__setattr__(self, "b", as_point(self.b))

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    def bbox(self):
        return (min(self.a.x, self.b.x), min(self.a.y, self.b.y),
                max(self.a.x, self.b.x), max(self.a.y, self.b.y))

    def covers(self, cx, cy, h):
        return _linf_to_segment(cx, cy, self.a, self.b) <= 0.5 * h * (1 + _SQ_TOL)

    def blocks(self, cx, cy, h):
        """Open-square test used for slits: corner contact does not count."""
        return _linf_to_segment(cx, cy, self.a, self.b) < 0.5 * h * (1 - _SQ_TOL)

    def contains(self, x, y):
        return _linf_to_segment(x, y, self.a, self.b) <= 1e-12

    def to_dict(self):
        return {"type": self.type, "a": list(self.a), "b": list(self.b)}


@dataclass(frozen=True)
class Arc(Shape):
    center: Point
    radius: float
    start: float
    stop: float
    type: ClassVar[str] = "arc"

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))

    def points(self, step: float) -> np.ndarray:
        n = max(2, int(math.ceil(abs(self.stop - self.start) * self.radius / step)) + 1)
        t = np.linspace(self.start, self.stop, n)
        return np.column_stack([self.center.x + self.radius * np.cos(t),
                                self.center.y + self.radius * np.sin(t)])

    def bbox(self):
        p = self.points(self.radius * 0.01 + 1e-12)
        return (p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max())

    def covers(self, cx, cy, h):
        p = self.points(h / 4)
        out = np.zeros(np.shape(cx), dtype=bool)
        for k in range(len(p) - 1):
            out |= Segment(Point(*p[k]), Point(*p[k + 1])).covers(cx, cy, h)
        return out

    def contains(self, x, y):
        r = np.hypot(np.asarray(x) - self.center.x, np.asarray(y) - self.center.y)
        return np.abs(r - self.radius) <= 1e-12

    def to_dict(self):
        return {"type": self.type, "center": list(self.center), "radius": self.radius,
                "start": self.start, "stop": self.stop}


@dataclass(frozen=True)
class DiskRegion(Shape):
    center: Point
    radius: float
    type: ClassVar[str] = "disk"

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius >= 0:
            raise ValueError("disk radius must be nonnegative")

    def bbox(self):
        c, r = self.center, self.radius
        return (c.x - r, c.y - r, c.x + r, c.y + r)

    def covers(self, cx, cy, h):
        dx = np.maximum(np.abs(np.asarray(cx) - self.center.x) - 0.5 * h, 0.0)
        dy = np.maximum(np.abs(np.asarray(cy) - self.center.y) - 0.5 * h, 0.0)
        return dx * dx + dy * dy <= (self.radius + _SQ_TOL * h) ** 2

    def contains(self, x, y):
        return np.hypot(np.asarray(x) - self.center.x, np.asarray(y) - self.center.y) <= self.radius

    def to_dict(self):
        return {"type": self.type, "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class AnnulusRegion(Shape):
    """Closed ring ``inner <= |z - center| <= outer``."""

    center: Point
    inner: float
    outer: float
    type: ClassVar[str] = "annulus"

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not 0 <= self.inner <= self.outer:
            raise ValueError("annulus needs 0 <= inner <= outer")

    def bbox(self):
        c, r = self.center, self.outer
        return (c.x - r, c.y - r, c.x + r, c.y + r)

    def covers(self, cx, cy, h):
        ax = np.abs(np.asarray(cx) - self.center.x)
        ay = np.abs(np.asarray(cy) - self.center.y)
        near = np.hypot(np.maximum(ax - 0.5 * h, 0.0), np.maximum(ay - 0.5 * h, 0.0))
        far = np.hypot(ax + 0.5 * h, ay + 0.5 * h)
        return (near <= self.outer + _SQ_TOL * h) & (far >= self.inner - _SQ_TOL * h)

    def contains(self, x, y):
        r = np.hypot(np.asarray(x) - self.center.x, np.asarray(y) - self.center.y)
        return (r >= self.inner) & (r <= self.outer)

    def to_dict(self):
        return {"type": self.type, "center": list(self.center),
                "inner": self.inner, "outer": self.outer}


@dataclass(frozen=True)
class BoxRegion(Shape):
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    type: ClassVar[str] = "box"

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("box corners must satisfy xmin < xmax, ymin < ymax")

    def bbox(self):
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def covers(self, cx, cy, h):
        cx, cy = np.asarray(cx), np.asarray(cy)
        s = 0.5 * h * (1 + _SQ_TOL)
        return ((cx + s >= self.xmin) & (cx - s <= self.xmax)
                & (cy + s >= self.ymin) & (cy - s <= self.ymax))

    def contains(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return (x >= self.xmin) & (x <= self.xmax) & (y >= self.ymin) & (y <= self.ymax)

    def to_dict(self):
        return {"type": self.type, "xmin": self.xmin, "ymin": self.ymin,
                "xmax": self.xmax, "ymax": self.ymax}


@dataclass(frozen=True)
class PolygonRegion(Shape):
    """Closed filled polygon (vertices in order, last edge implied)."""

    vertices: tuple[Point, ...]
    type: ClassVar[str] = "polygon"

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(as_point(v) for v in self.vertices))
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def bbox(self):
        a = self.array
        return (a[:, 0].min(), a[:, 1].min(), a[:, 0].max(), a[:, 1].max())

    def covers(self, cx, cy, h):
        a = self.array
        out = _points_in_polygon(cx, cy, a)
        for k in range(len(a)):
            out |= Segment(Point(*a[k]), Point(*a[(k + 1) % len(a)])).covers(cx, cy, h)
        return out

    def contains(self, x, y):
        return _points_in_polygon(x, y, self.array)

    def _outer_distance(self, x, y):
        return _dist_to_polygon(x, y, self.array)

    def to_dict(self):
        return {"type": self.type, "vertices": [list(v) for v in self.vertices]}


SHAPES = {cls.type: cls for cls in (Segment, Arc, DiskRegion, AnnulusRegion, BoxRegion, PolygonRegion)}


def shape_from_dict(d: dict) -> Shape:
    d = dict(d)
    cls = SHAPES[d.pop("type")]
    if cls is PolygonRegion:
        return PolygonRegion(tuple(as_point(v) for v in d["vertices"]))
    for key in ("a", "b", "center"):
        if key in d:
            d[key] = as_point(d[key])
    return cls(**d)


INNER_CONTINUUM = "inner_continuum"
BOUNDARY_PLATE = "boundary_plate"


@dataclass(frozen=True)
class PlateSpec:
    """A condenser plate: a union of shapes, or the domain boundary itself."""

    geometry: tuple[Shape, ...] = ()
    role: str = INNER_CONTINUUM

    def __post_init__(self):
        if self.role not in (INNER_CONTINUUM, BOUNDARY_PLATE):
            raise ValueError(f"unknown plate role {self.role!r}")
        geom = self.geometry
        if isinstance(geom, Shape):
            geom = (geom,)
        object.__setattr__(self, "geometry", tuple(geom))
        if self.role == INNER_CONTINUUM and not self.geometry:
            raise ValueError("inner_continuum plate needs geometry")

    @classmethod
    def boundary(cls) -> "PlateSpec":
        return cls((), BOUNDARY_PLATE)

    @classmethod
    def of(cls, *shapes: Shape) -> "PlateSpec":
        return cls(tuple(shapes), INNER_CONTINUUM)

    def to_dict(self) -> dict:
        out = {"role": self.role}
        if self.geometry:
            out["geometry"] = [s.to_dict() for s in self.geometry]
        return out


def plate_from_dict(d: dict) -> PlateSpec:
    role = d.get("role", INNER_CONTINUUM)
    return PlateSpec(tuple(shape_from_dict(s) for s in d.get("geometry", ())), role)


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


class DomainSpec:
    """A bounded open plane set, optionally with slits removed."""

    kind: ClassVar[str] = ""

    def contains(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def cuts(self) -> tuple[Segment, ...]:
        return ()

    def boundary_distance(self, x, y) -> np.ndarray:
        """Euclidean distance from points of the domain to its boundary (slits included)."""
        d = self._outer_distance(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        for c in self.cuts():
            d = np.minimum(d, _dist_to_segment(x, y, c.a, c.b))
        return d

    def _outer_distance(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def bbox(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def perimeter(self) -> float:
        raise NotImplementedError

    def features(self) -> list[tuple[str, float]]:
        """Named widths that must span at least three cells."""
        return []

    def boundary_polygon(self, h: float) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} has no polygonal boundary")

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params()}


@dataclass(frozen=True)
class Disk(DomainSpec):
    center: Point = Point(0.0, 0.0)
    radius: float = 1.0
    kind: ClassVar[str] = "disk"

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")

    def contains(self, x, y):
        return (np.asarray(x) - self.center.x) ** 2 + (np.asarray(y) - self.center.y) ** 2 < self.radius ** 2

    def _outer_distance(self, x, y):
        return np.abs(self.radius - np.hypot(x - self.center.x, y - self.center.y))

    def bbox(self):
        c, r = self.center, self.radius
        return (c.x - r, c.y - r, c.x + r, c.y + r)

    def perimeter(self):
        return 2 * math.pi * self.radius

    def features(self):
        return [("diameter", 2 * self.radius)]

    def boundary_polygon(self, h):
        n = max(16, int(math.ceil(2 * math.pi * self.radius / h)))
        t = 2 * math.pi * np.arange(n) / n
        return np.column_stack([self.center.x + self.radius * np.cos(t),
                                self.center.y + self.radius * np.sin(t)])

    def params(self):
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Rectangle(DomainSpec):
    xmin: float = -1.0
    ymin: float = -1.0
    xmax: float = 1.0
    ymax: float = 1.0
    kind: ClassVar[str] = "rectangle"

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("rectangle corners must satisfy xmin < xmax, ymin < ymax")

    def contains(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return (x > self.xmin) & (x < self.xmax) & (y > self.ymin) & (y < self.ymax)

    def _outer_distance(self, x, y):
        return np.abs(np.minimum.reduce([x - self.xmin, self.xmax - x, y - self.ymin, self.ymax - y]))

    def bbox(self):
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def perimeter(self):
        return 2 * ((self.xmax - self.xmin) + (self.ymax - self.ymin))

    def features(self):
        return [("width", self.xmax - self.xmin), ("height", self.ymax - self.ymin)]

    def boundary_polygon(self, h):
        corners = [(self.xmin, self.ymin), (self.xmax, self.ymin),
                   (self.xmax, self.ymax), (self.xmin, self.ymax)]
        return _refine_closed(np.asarray(corners, dtype=float), h)

    def params(self):
        return {"xmin": self.xmin, "ymin": self.ymin, "xmax": self.xmax, "ymax": self.ymax}


@dataclass(frozen=True)
class SlitDisk(DomainSpec):
    radius: float = 1.0
    slits: tuple[Segment, ...] = (Segment(Point(0.0, 0.0), Point(1.0, 0.0)),)
    kind: ClassVar[str] = "slit_disk"

    def __post_init__(self):
        object.__setattr__(self, "slits", tuple(self.slits))

    def contains(self, x, y):
        return np.asarray(x) ** 2 + np.asarray(y) ** 2 < self.radius ** 2

    def _outer_distance(self, x, y):
        return np.abs(self.radius - np.hypot(x, y))

    def cuts(self):
        return self.slits

    def bbox(self):
        r = self.radius
        return (-r, -r, r, r)

    def perimeter(self):
        return 2 * math.pi * self.radius + 2 * sum(s.length for s in self.slits)

    def features(self):
        return [("diameter", 2 * self.radius)] + [(f"slit{k}", s.length) for k, s in enumerate(self.slits)]

    def params(self):
        return {"radius": self.radius, "slits": [[list(s.a), list(s.b)] for s in self.slits]}


@dataclass(frozen=True)
class Comb(DomainSpec):
    """The rectangle (-2,2)x(0,1) minus the teeth at heights 3^-n and 2*3^-n, n <= levels.

    Teeth at ``y = 3^-n`` run over ``-1 <= x <= 2`` (attached to the right wall) and
    teeth at ``y = 2*3^-n`` over ``-2 <= x <= 1`` (left wall), so a serpentine
    channel leads down to the bottom edge.
    """

    levels: int = 3
    kind: ClassVar[str] = "comb"

    def __post_init__(self):
        if int(self.levels) != self.levels or self.levels < 1:
            raise ValueError("comb levels must be an integer >= 1")

    def contains(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return (x > -2) & (x < 2) & (y > 0) & (y < 1)

    def _outer_distance(self, x, y):
        return np.abs(np.minimum.reduce([x + 2, 2 - x, y, 1 - y]))

    def teeth(self) -> tuple[Segment, ...]:
        out = []
        for n in range(1, self.levels + 1):
            out.append(Segment(Point(-2.0, 2.0 / 3 ** n), Point(1.0, 2.0 / 3 ** n)))
            out.append(Segment(Point(-1.0, 1.0 / 3 ** n), Point(2.0, 1.0 / 3 ** n)))
        return tuple(out)

    def cuts(self):
        return self.teeth()

    def channel_width(self, level: int) -> float:
        return 3.0 ** -level

    def channel_mid(self, level: int) -> float:
        """Height of the middle of the level-``level`` channel (between both teeth of that level)."""
        return 1.5 / 3 ** level

    def bbox(self):
        return (-2.0, 0.0, 2.0, 1.0)

    def perimeter(self):
        return 10.0 + 12.0 * self.levels

    def features(self):
        return [(f"channel{k}", self.channel_width(k)) for k in range(1, self.levels + 1)]

    def params(self):
        return {"levels": self.levels}


@dataclass(frozen=True)
class CantorFan(DomainSpec):
    """disk(0, radius) minus radial slits from the origin.

    Generation ``n`` (1 <= n <= depth) adds slits at angles ``2*pi*p/2^n`` (p odd)
    of length ``2^-n``; a base slit along the positive x-axis of length 1 closes
    the fan, so depth ``d`` leaves ``2^d`` sectors at the origin.
    """

    depth: int = 2
    radius: float = 2.0
    kind: ClassVar[str] = "cantor_fan"

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise ValueError("fan depth must be an integer >= 1")

    def slits(self) -> tuple[Segment, ...]:
        out = [Segment(Point(0.0, 0.0), Point(1.0, 0.0))]
        for n in range(1, self.depth + 1):
            for p in range(1, 2 ** n, 2):
                t = 2 * math.pi * p / 2 ** n
                r = 2.0 ** -n
                out.append(Segment(Point(0.0, 0.0), Point(_snap(r * math.cos(t)), _snap(r * math.sin(t)))))
        return tuple(out)

    def sector_angles(self) -> list[tuple[float, float]]:
        """Angular intervals of the ``2^depth`` sectors at the origin, counterclockwise from 0."""
        n = 2 ** self.depth
        return [(2 * math.pi * k / n, 2 * math.pi * (k + 1) / n) for k in range(n)]

    def contains(self, x, y):
        return np.asarray(x) ** 2 + np.asarray(y) ** 2 < self.radius ** 2

    def _outer_distance(self, x, y):
        return np.abs(self.radius - np.hypot(x, y))

    def cuts(self):
        return self.slits()

    def bbox(self):
        r = self.radius
        return (-r, -r, r, r)

    def perimeter(self):
        return 2 * math.pi * self.radius + 2 * sum(s.length for s in self.slits())

    def features(self):
        return [(f"slit{n}", 2.0 ** -n) for n in range(1, self.depth + 1)]

    def params(self):
        return {"depth": self.depth, "radius": self.radius}


def _snap(v: float) -> float:
    return 0.0 if abs(v) < 1e-14 else v


@dataclass(frozen=True)
class PolygonDomain(DomainSpec):
    vertices: tuple[Point, ...]
    kind: ClassVar[str] = "polygon"

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(as_point(v) for v in self.vertices))
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def contains(self, x, y):
        return _points_in_polygon(x, y, self.array)

    def _outer_distance(self, x, y):
        return _dist_to_polygon(x, y, self.array)

    def bbox(self):
        a = self.array
        return (a[:, 0].min(), a[:, 1].min(), a[:, 0].max(), a[:, 1].max())

    def perimeter(self):
        a = self.array
        return float(np.sum(np.hypot(*(np.roll(a, -1, axis=0) - a).T)))

    def boundary_polygon(self, h):
        return _refine_closed(self.array, h)

    def params(self):
        return {"vertices": [list(v) for v in self.vertices]}


def koch_snowflake(iterations: int, radius: float = 1.0) -> np.ndarray:
    """Counterclockwise vertices of the Koch snowflake inscribed in circle ``radius``."""
    t = math.pi / 2 + 2 * math.pi * np.arange(3) / 3
    pts = np.column_stack([radius * np.cos(t), radius * np.sin(t)])
    for _ in range(iterations):
        q = np.roll(pts, -1, axis=0)
        d = q - pts
        normal = np.column_stack([d[:, 1], -d[:, 0]]) * (math.sqrt(3) / 6)
        new = np.empty((4 * len(pts), 2))
        new[0::4] = pts
        new[1::4] = pts + d / 3
        new[2::4] = pts + d / 2 + normal
        new[3::4] = pts + 2 * d / 3
        pts = new
    return pts


@dataclass(frozen=True)
class Snowflake(DomainSpec):
    iterations: int = 2
    radius: float = 1.0
    kind: ClassVar[str] = "snowflake"

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError("snowflake iterations must be an integer >= 0")

    @functools.cached_property
    def array(self) -> np.ndarray:
        return koch_snowflake(self.iterations, self.radius)

    def contains(self, x, y):
        return _points_in_polygon(x, y, self.array)

    def _outer_distance(self, x, y):
        return _dist_to_polygon(x, y, self.array)

    def bbox(self):
        a = self.array
        return (a[:, 0].min(), a[:, 1].min(), a[:, 0].max(), a[:, 1].max())

    def perimeter(self):
        side = self.radius * math.sqrt(3)
        return 3 * side * (4 / 3) ** self.iterations

    def features(self):
        side = self.radius * math.sqrt(3) / 3 ** self.iterations
        return [("edge", side)] if self.iterations else []

    def boundary_polygon(self, h):
        return _refine_closed(self.array, h)

    def params(self):
        return {"iterations": self.iterations, "radius": self.radius}


def _refine_closed(verts: np.ndarray, h: float) -> np.ndarray:
    out = []
    n = len(verts)
    for k in range(n):
        p, q = verts[k], verts[(k + 1) % n]
        m = max(1, int(math.ceil(np.hypot(*(q - p)) / h)))
        for s in range(m):
            out.append(p + (q - p) * s / m)
    return np.asarray(out)


DOMAINS = {cls.kind: cls for cls in (Disk, Rectangle, SlitDisk, Comb, CantorFan, PolygonDomain, Snowflake)}


def domain_from_dict(d: dict) -> DomainSpec:
    kind = d["kind"]
    params = dict(d.get("params", {}))
    cls = DOMAINS[kind]
    if "center" in params:
        params["center"] = as_point(params["center"])
    if cls is SlitDisk and "slits" in params:
        params["slits"] = tuple(Segment(as_point(a), as_point(b)) for a, b in params["slits"])
    if cls is PolygonDomain:
        params["vertices"] = tuple(as_point(v) for v in params["vertices"])
    return cls(**params)


# ---------------------------------------------------------------------------
# Grid masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridMask:
    """Cell classification of a domain at resolution ``h``.

    ``cells`` holds the labels (possibly with plate labels painted on);
    ``base`` always holds the plain interior/boundary/exterior classification.
    """

    h: float
    origin: Point
    cells: np.ndarray
    domain: DomainSpec | None = None
    base: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.base is None:
            object.__setattr__(self, "base", self.cells)
        self.cells.setflags(write=False)
        self.base.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def size(self) -> int:
        return self.cells.size

    @functools.cached_property
    def interior(self) -> np.ndarray:
        return self.base == INTERIOR

    @functools.cached_property
    def boundary(self) -> np.ndarray:
        return self.base == BOUNDARY

    @functools.cached_property
    def interior_flat(self) -> np.ndarray:
        return np.flatnonzero(self.interior)

    @functools.cached_property
    def boundary_flat(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @functools.cached_property
    def xs(self) -> np.ndarray:
        return self.origin.x + self.h * np.arange(self.shape[0])

    @functools.cached_property
    def ys(self) -> np.ndarray:
        return self.origin.y + self.h * np.arange(self.shape[1])

    def centers(self, flat: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        if flat is None:
            X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
            return X, Y
        i, j = np.divmod(np.asarray(flat, dtype=np.int64), self.shape[1])
        return self.origin.x + self.h * i, self.origin.y + self.h * j

    def cell_of(self, pts) -> np.ndarray:
        """Flat index of the cell containing each point; -1 if off-grid."""
        p = np.asarray(pts, dtype=float).reshape(-1, 2)
        i = np.rint((p[:, 0] - self.origin.x) / self.h).astype(np.int64)
        j = np.rint((p[:, 1] - self.origin.y) / self.h).astype(np.int64)
        ok = (i >= 0) & (i < self.shape[0]) & (j >= 0) & (j < self.shape[1])
        return np.where(ok, i * self.shape[1] + j, -1)

    def is_interior_point(self, p) -> bool:
        c = self.cell_of([p])[0]
        return bool(c >= 0 and self.interior.flat[c])

    def with_plates(self, plate0: np.ndarray, plate1: np.ndarray) -> "GridMask":
        cells = np.array(self.base)
        cells.flat[np.asarray(plate0, dtype=np.int64)] = PLATE0
        cells.flat[np.asarray(plate1, dtype=np.int64)] = PLATE1
        return GridMask(self.h, self.origin, cells, self.domain, self.base)

    def window(self, bbox, pad: float = 0.0) -> tuple[slice, slice]:
        """Index slices of cells whose centres lie within ``bbox`` grown by ``pad``."""
        xmin, ymin, xmax, ymax = bbox
        i0 = max(0, int(math.floor((xmin - pad - self.origin.x) / self.h)))
        i1 = min(self.shape[0], int(math.ceil((xmax + pad - self.origin.x) / self.h)) + 1)
        j0 = max(0, int(math.floor((ymin - pad - self.origin.y) / self.h)))
        j1 = min(self.shape[1], int(math.ceil((ymax + pad - self.origin.y) / self.h)) + 1)
        return slice(i0, max(i0, i1)), slice(j0, max(j0, j1))

    def cover(self, shape: Shape) -> np.ndarray:
        """Flat indices of all cells whose closed square meets ``shape``."""
        si, sj = self.window(shape.bbox(), pad=self.h)
        if si.start >= si.stop or sj.start >= sj.stop:
            return np.zeros(0, dtype=np.int64)
        X, Y = np.meshgrid(self.xs[si], self.ys[sj], indexing="ij")
        hit = shape.covers(X, Y, self.h)
        ii, jj = np.nonzero(hit)
        return np.sort((ii + si.start) * self.shape[1] + (jj + sj.start)).astype(np.int64)

    @functools.cached_property
    def boundary_distance(self) -> np.ndarray:
        """Euclidean distance (plane units) from each interior cell centre to the nearest non-interior centre."""
        return ndimage.distance_transform_edt(self.interior) * self.h


def _check_resolution(domain: DomainSpec, h: float) -> None:
    for name, width in domain.features():
        if width / h < _MIN_CELLS * (1 - 1e-9):
            raise UnresolvedFeature(
                f"{domain.kind}: feature {name} of width {width:.6g} spans "
                f"{width / h:.3g} < {_MIN_CELLS:g} cells at h={h:.6g}"
            )


@functools.lru_cache(maxsize=64)
def build_mask(domain: DomainSpec, h: float) -> GridMask:
    """Rasterize ``domain`` at cell size ``h``.

    Interior cells have their centre in the open set and clear of every slit;
    only the largest 4-connected component is kept. Boundary cells are the
    non-interior cells 4-adjacent to the interior.
    """
    if not h > 0:
        raise ValueError("cell size h must be positive")
    _check_resolution(domain, h)
    xmin, ymin, xmax, ymax = domain.bbox()
    i0 = int(math.floor(xmin / h + 1e-9)) - 2
    i1 = int(math.ceil(xmax / h - 1e-9)) + 2
    j0 = int(math.floor(ymin / h + 1e-9)) - 2
    j1 = int(math.ceil(ymax / h - 1e-9)) + 2
    xs = h * np.arange(i0, i1 + 1)
    ys = h * np.arange(j0, j1 + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = domain.contains(X, Y)
    origin = Point(float(xs[0]), float(ys[0]))
    tmp = GridMask(h, origin, np.zeros(X.shape, dtype=np.int8))
    for cut in domain.cuts():
        si, sj = tmp.window(cut.bbox(), pad=h)
        sub = inside[si, sj]
        sub &= ~cut.blocks(X[si, sj], Y[si, sj], h)
    labels, n = ndimage.label(inside)
    if n == 0:
        raise UnresolvedFeature(f"{domain.kind}: no interior cells at h={h:.6g}")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    interior = labels == int(np.argmax(sizes))
    cells = np.full(X.shape, EXTERIOR, dtype=np.int8)
    cells[interior] = INTERIOR
    ring = ndimage.binary_dilation(interior) & ~interior
    cells[ring] = BOUNDARY
    return GridMask(h, origin, cells, domain)


def rasterize_plate(plate: PlateSpec, mask: GridMask) -> np.ndarray:
    """Cells of a plate: covering interior cells, or every boundary cell."""
    if plate.role == BOUNDARY_PLATE:
        out = mask.boundary_flat
    else:
        parts = [mask.cover(s) for s in plate.geometry]
        out = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        out = out[mask.interior.flat[out]]
    if out.size == 0:
        raise EmptyPlate(f"plate {plate.to_dict()} covers no cell at h={mask.h:.6g}")
    return out.astype(np.int64)


def covering_cells(curve: Polyline, mask: GridMask) -> np.ndarray:
    """All cells whose closed square meets the curve."""
    v = curve.vertices
    if len(v) == 1:
        return mask.cover(Segment(v[0], v[0]))
    parts = [mask.cover(Segment(v[k], v[k + 1])) for k in range(len(v) - 1)]
    return np.unique(np.concatenate(parts))


def rasterize_curve(curve: Polyline, mask: GridMask, region: Shape | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Split the covering cells of ``curve`` into (inside ``region``, outside ``region``).

    Curves must stay in the open domain: any covering cell that is not an
    interior cell raises :class:`CurveEscapesDomain`.
    """
    cells = covering_cells(curve, mask)
    bad = ~mask.interior.flat[cells]
    if cells.size == 0 or bad.any():
        raise CurveEscapesDomain(
            f"{int(bad.sum())} covering cell(s) of the curve are not interior at h={mask.h:.6g}"
        )
    if region is None:
        return np.zeros(0, dtype=np.int64), cells
    x, y = mask.centers(cells)
    inV = region.contains(x, y)
    return cells[inV], cells[~inV]


def is_grid_connected(cells: np.ndarray, mask: GridMask, connectivity: int = 2) -> bool:
    """Whether a cell set is connected (connectivity 1: 4-neighbours, 2: 8-neighbours)."""
    if len(cells) == 0:
        return False
    img = np.zeros(mask.shape, dtype=bool)
    img.flat[np.asarray(cells)] = True
    _, n = ndimage.label(img, structure=ndimage.generate_binary_structure(2, connectivity))
    return n == 1


def symmetric_difference_area(a: GridMask, b: GridMask, sample_h: float | None = None) -> float:
    """Area of the symmetric difference of two interiors, by sampling on a common lattice."""
    s = sample_h or min(a.h, b.h) / 4
    x0 = max(a.xs[0], b.xs[0])
    x1 = min(a.xs[-1], b.xs[-1])
    y0 = max(a.ys[0], b.ys[0])
    y1 = min(a.ys[-1], b.ys[-1])
    xs = np.arange(x0 + s / 2, x1, s)
    ys = np.arange(y0 + s / 2, y1, s)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    ia = a.cell_of(pts)
    ib = b.cell_of(pts)
    in_a = (ia >= 0) & a.interior.ravel()[np.maximum(ia, 0)]
    in_b = (ib >= 0) & b.interior.ravel()[np.maximum(ib, 0)]
    return float(np.count_nonzero(in_a != in_b)) * s * s


def iter_shapes(plates: Iterable[PlateSpec]) -> Sequence[Shape]:
    return [s for p in plates for s in p.geometry]
