"""Explicit conformal and quasiconformal test maps.

Maps act on points, polylines, condensers and polygonal domains.  Curved
images are represented by polygons refined until every image edge stays within
``h`` of the mapped curve.  The module also measures the Ahlfors three-point
constant of closed polygons.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .capacity import CapacityEstimate, Condenser, condenser_capacity
from .capmetric import MetricConfig, rho
from .errors import OutsideSource, PreconditionError, SelfIntersecting
from .geometry import (
    AnnulusRegion, Arc, BoxRegion, DiskRegion, DomainSpec, PlateSpec, Point, PolygonDomain,
    PolygonRegion, Polyline, Segment, Shape, as_point,
)

KINDS = ("mobius", "power", "affine_stretch", "joukowski", "compose")


@dataclass(frozen=True)
class AnalyticMap:
    """``kind`` with parameters; ``K`` is the quasiconformality constant (a bound for compositions)."""

    kind: str
    params: tuple = ()
    parts: tuple["AnalyticMap", ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.kind == "mobius":
            a, b, c, d = (complex(v) for v in self.params)
            if abs(a * d - b * c) == 0:
                raise ValueError("mobius map needs ad - bc != 0")
            object.__setattr__(self, "params", (a, b, c, d))
        elif self.kind == "power":
            (alpha,) = self.params
            if not alpha > 0:
                raise ValueError("power exponent must be positive")
        elif self.kind == "affine_stretch":
            (lam,) = self.params
            if not lam > 0:
                raise ValueError("stretch factor must be positive")
        elif self.kind == "compose" and len(self.parts) < 1:
            raise ValueError("composition needs at least one map")

    @property
    def K(self) -> float:
        if self.kind == "affine_stretch":
            lam = float(self.params[0])
            return max(lam, 1.0 / lam)
        if self.kind == "compose":
            return float(np.prod([m.K for m in self.parts]))
        return 1.0

    @property
    def conformal(self) -> bool:
        return self.K == 1.0

    # -- pointwise action ----------------------------------------------------

    def in_source(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.kind == "mobius":
            a, b, c, d = self.params
            return np.abs(c * z + d) > 1e-12 * max(1.0, abs(c) + abs(d))
        if self.kind == "power":
            alpha = self.params[0]
            lim = math.pi / max(alpha, 1.0)
            return (np.abs(z) > 0) & (np.abs(np.angle(z)) < lim)
        if self.kind == "joukowski":
            return np.abs(z) > 1.0
        if self.kind == "compose":
            ok = np.ones(z.shape, dtype=bool)
            w = z.copy()
            for m in self.parts:
                ok &= m.in_source(w)
                w = np.where(ok, m._apply(np.where(ok, w, 1 + 2j)), w)
            return ok
        return np.ones(z.shape, dtype=bool)

    def _apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "mobius":
            a, b, c, d = self.params
            return (a * z + b) / (c * z + d)
        if self.kind == "power":
            return np.exp(self.params[0] * np.log(z))
        if self.kind == "affine_stretch":
            return self.params[0] * z.real + 1j * z.imag
        if self.kind == "joukowski":
            return z + 1.0 / z
        for m in self.parts:
            z = m._apply(z)
        return z

    def __call__(self, z) -> np.ndarray:
        """Image of complex points; raises :class:`OutsideSource` off the source domain."""
        z = np.asarray(z, dtype=complex)
        if not self.in_source(z).all():
            raise OutsideSource(f"{self.kind}: point outside the source domain")
        return self._apply(z)

    def inverse(self) -> "AnalyticMap":
        if self.kind == "mobius":
            a, b, c, d = self.params
            return AnalyticMap("mobius", (d, -b, -c, a))
        if self.kind == "power":
            return AnalyticMap("power", (1.0 / self.params[0],))
        if self.kind == "affine_stretch":
            return AnalyticMap("affine_stretch", (1.0 / self.params[0],))
        if self.kind == "compose":
            return AnalyticMap("compose", (), tuple(m.inverse() for m in reversed(self.parts)))
        raise PreconditionError("joukowski has no single-valued inverse in this catalog")

    def to_dict(self) -> dict:
        if self.kind == "compose":
            return {"kind": "compose", "parts": [m.to_dict() for m in self.parts]}
        params = [[v.real, v.imag] if isinstance(v, complex) else v for v in self.params]
        return {"kind": self.kind, "params": params}


def mobius(a, b, c, d) -> AnalyticMap:
    return AnalyticMap("mobius", (a, b, c, d))


def disk_automorphism(a: complex, rotation: float = 0.0) -> AnalyticMap:
    """``z -> e^{i t} (z - a) / (1 - conj(a) z)`` for ``|a| < 1``."""
    a = complex(a)
    if not abs(a) < 1:
        raise ValueError("disk automorphism needs |a| < 1")
    u = cmath.exp(1j * rotation)
    return AnalyticMap("mobius", (u, -u * a, -a.conjugate(), 1.0))


def power(alpha: float) -> AnalyticMap:
    return AnalyticMap("power", (float(alpha),))


def affine_stretch(lam: float) -> AnalyticMap:
    """``(x, y) -> (lam x, y)`` with ``lam >= 1``; distortion ``K = lam``."""
    if not lam >= 1:
        raise ValueError("stretch factor must be >= 1")
    return AnalyticMap("affine_stretch", (float(lam),))


def joukowski() -> AnalyticMap:
    return AnalyticMap("joukowski")


def compose(*maps: AnalyticMap) -> AnalyticMap:
    """``compose(f, g)`` applies ``f`` first, then ``g``."""
    return AnalyticMap("compose", (), tuple(maps))


def identity() -> AnalyticMap:
    return mobius(1, 0, 0, 1)


def map_from_dict(d: dict) -> AnalyticMap:
    kind = d["kind"]
    if kind == "compose":
        return compose(*(map_from_dict(p) for p in d["parts"]))
    if kind == "disk_automorphism":
        a = d["params"][0]
        return disk_automorphism(complex(*a) if isinstance(a, (list, tuple)) else complex(a),
                                 *(d["params"][1:]))
    params = tuple(complex(*v) if isinstance(v, (list, tuple)) else v for v in d.get("params", ()))
    return AnalyticMap(kind, params)


# ---------------------------------------------------------------------------
# Pushforward
# ---------------------------------------------------------------------------


def _to_c(p) -> complex:
    p = as_point(p)
    return complex(p.x, p.y)


def _to_pts(z: np.ndarray) -> tuple[Point, ...]:
    return tuple(Point(float(w.real), float(w.imag)) for w in np.atleast_1d(z))


def _refine_image(f: AnalyticMap, z: np.ndarray, h: float, closed: bool, max_depth: int = 20) -> np.ndarray:
    """Subdivide source edges until each image edge is within ``h`` of the mapped edge midpoint."""
    z = np.asarray(z, dtype=complex)
    src = list(z) + ([z[0]] if closed else [])
    out = [src[0]]
    for a, b in zip(src[:-1], src[1:]):
        stack = [(a, b, 0)]
        seg = []
        while stack:
            p, q, depth = stack.pop()
            fp, fq, fm = f(np.array([p, q, 0.5 * (p + q)]))
            if depth < max_depth and abs(fm - 0.5 * (fp + fq)) > h:
                m = 0.5 * (p + q)
                stack.append((m, q, depth + 1))
                stack.append((p, m, depth + 1))
            else:
                seg.append(q)
        out.extend(seg)
    if closed:
        out = out[:-1]
    return f(np.array(out))


def _shape_outline(shape: Shape, h: float) -> np.ndarray:
    if isinstance(shape, DiskRegion):
        n = max(16, int(math.ceil(2 * math.pi * shape.radius / h)))
        t = 2 * math.pi * np.arange(n) / n
        return shape.center.x + shape.radius * np.cos(t) + 1j * (shape.center.y + shape.radius * np.sin(t))
    if isinstance(shape, BoxRegion):
        return np.array([shape.xmin + 1j * shape.ymin, shape.xmax + 1j * shape.ymin,
                         shape.xmax + 1j * shape.ymax, shape.xmin + 1j * shape.ymax])
    if isinstance(shape, PolygonRegion):
        a = shape.array
        return a[:, 0] + 1j * a[:, 1]
    raise PreconditionError(f"cannot push forward a {shape.type} region as a filled polygon")


def pushforward(f: AnalyticMap, obj, h: float = 1 / 128):
    """Image of a Point, Polyline, Segment/Arc (as Polyline), region, PlateSpec, DomainSpec or Condenser.

    Regions and domains become filled polygons whose edges stay within ``h``
    of the true image curve.  The boundary plate is mapped to itself.
    """
    if isinstance(obj, Point) or (isinstance(obj, tuple) and len(obj) == 2 and not isinstance(obj[0], Shape)):
        return _to_pts(f(np.array([_to_c(obj)])))[0]
    if isinstance(obj, Polyline):
        z = obj.array[:, 0] + 1j * obj.array[:, 1]
        if len(z) == 1:
            return Polyline(_to_pts(f(z)))
        return Polyline(_to_pts(_refine_image(f, z, h, closed=False)))
    if isinstance(obj, Segment):
        return pushforward(f, Polyline((obj.a, obj.b)), h)
    if isinstance(obj, Arc):
        pts = obj.points(h)
        return pushforward(f, Polyline.from_array(pts), h)
    if isinstance(obj, AnnulusRegion):
        raise PreconditionError("annulus regions have no simply connected polygon image")
    if isinstance(obj, Shape):
        return PolygonRegion(_to_pts(_refine_image(f, _shape_outline(obj, h), h, closed=True)))
    if isinstance(obj, PlateSpec):
        if obj.role == "boundary_plate":
            return obj
        return PlateSpec(tuple(pushforward(f, g, h) for g in obj.geometry), obj.role)
    if isinstance(obj, Condenser):
        return Condenser(pushforward(f, obj.domain, h), pushforward(f, obj.plate0, h),
                         pushforward(f, obj.plate1, h))
    if isinstance(obj, DomainSpec):
        if obj.cuts():
            raise PreconditionError("domains with slits cannot be pushed forward as polygons")
        poly = obj.boundary_polygon(h)
        img = _refine_image(f, poly[:, 0] + 1j * poly[:, 1], h, closed=True)
        return PolygonDomain(_to_pts(img))
    raise TypeError(f"cannot push forward {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Invariance checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvarianceReport:
    map: AnalyticMap
    source: CapacityEstimate
    image: CapacityEstimate
    ratio: float
    delta: float  # combined relative extrapolation error band
    lower: float
    upper: float

    @property
    def within(self) -> bool:
        return self.lower * (1 - self.delta) <= self.ratio <= self.upper * (1 + self.delta)


def invariance_check(f: AnalyticMap, condenser: Condenser, h: float, refine: int = 1,
                     conformal_tol: float = 0.05) -> InvarianceReport:
    """``cp(image) / cp(source)`` with its admissible band.

    For ``K > 1`` the band is ``[1/K^2, K^2]`` widened by the relative error
    indicators; conformal maps use ``[1 - conformal_tol, 1 + conformal_tol]``.
    """
    image = pushforward(f, condenser, h)
    src, _ = condenser_capacity(condenser, h, refine)
    img, _ = condenser_capacity(image, h, refine)
    ratio = img.value / src.value if src.value > 0 else math.inf
    delta = 0.0
    for est in (src, img):
        if est.value > 0:
            delta += est.error_indicator / est.value
    K = f.K
    if K == 1.0:
        lo, hi = 1.0 - conformal_tol, 1.0 + conformal_tol
    else:
        lo, hi = 1.0 / K ** 2, K ** 2
    return InvarianceReport(f, src, img, ratio, delta, lo, hi)


@dataclass(frozen=True)
class QuasiIsometryReport:
    constant: float
    ratios: tuple[float, ...]
    source: tuple[float, ...]
    image: tuple[float, ...]
    excluded: int


def image_config(f: AnalyticMap, config: MetricConfig, h: float | None = None) -> MetricConfig:
    """Metric configuration on the image domain with ``(F, V)`` pushed forward."""
    h = config.h if h is None else h
    return MetricConfig(pushforward(f, config.domain, h), pushforward(f, config.F, h),
                        pushforward(f, config.V, h), h, config.budget, config.seed, config.noise_floor)


def _carried(f: AnalyticMap, curve: Polyline, ends: tuple[Point, Point], h: float) -> list[Polyline]:
    """``f(curve)`` with its endpoints snapped to ``ends`` (empty if it cannot be formed)."""
    if curve.degenerate:
        return []
    try:
        img = pushforward(f, curve, h).array
    except (OutsideSource, ValueError):
        return []
    img[0], img[-1] = ends[0], ends[1]
    try:
        return [Polyline.from_array(img)]
    except ValueError:
        return []


def quasi_isometry_check(f: AnalyticMap, pairs: Iterable[tuple], config_source: MetricConfig,
                         config_image: MetricConfig | None = None) -> QuasiIsometryReport:
    """Empirical bi-Lipschitz constant ``max(rho_img / rho_src, rho_src / rho_img)`` over pairs.

    Each side's search is seeded with the other side's optimal curve carried
    across by ``f`` (or its inverse): a mapped curve is admissible for the
    mapped pair, so both values stay upper bounds.
    """
    if config_image is None:
        config_image = image_config(f, config_source)
    try:
        finv = f.inverse()
    except PreconditionError:
        finv = None
    ratios, rs, ri = [], [], []
    excluded = 0
    for x, y in pairs:
        x, y = as_point(x), as_point(y)
        fx, fy = pushforward(f, x), pushforward(f, y)
        src = rho(x, y, config_source)
        img = rho(fx, fy, config_image, extra_curves=_carried(f, src.curve, (fx, fy), config_image.h))
        if finv is not None:
            back = _carried(finv, img.curve, (x, y), config_source.h)
            if back:
                src = rho(x, y, config_source, extra_curves=[src.curve] + back)
        a, b = src.value, img.value
        rs.append(a)
        ri.append(b)
        if a <= config_source.noise_floor or b <= config_image.noise_floor:
            excluded += 1
            continue
        ratios.append(b / a)
    const = max((max(r, 1 / r) for r in ratios), default=math.nan)
    return QuasiIsometryReport(const, tuple(ratios), tuple(rs), tuple(ri), excluded)


# ---------------------------------------------------------------------------
# Ahlfors three-point condition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurveQualityReport:
    ahlfors_constant: float
    pair: tuple[int, int]  # sample indices attaining the maximum
    samples: int
    vertices: int


def _segments_cross(p1, p2, q1, q2) -> np.ndarray:
    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                       - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))
    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return (o1 * o2 < 0) & (o3 * o4 < 0)


def check_simple(verts: np.ndarray) -> None:
    """Raise :class:`SelfIntersecting` if non-adjacent edges of the closed polygon cross or vertices repeat."""
    v = np.asarray(verts, dtype=float)
    n = len(v)
    if n < 3:
        raise SelfIntersecting("a closed polygon needs at least 3 vertices")
    if len(np.unique(v, axis=0)) < n:
        raise SelfIntersecting("polygon repeats a vertex")
    a, b = v, np.roll(v, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    if np.any(_segments_cross(a[i], b[i], a[j], b[j])):
        raise SelfIntersecting("polygon edges cross")


def _closed_vertices(polygon) -> np.ndarray:
    if isinstance(polygon, Polyline):
        v = polygon.array
    elif isinstance(polygon, (PolygonRegion, PolygonDomain)):
        v = polygon.array
    else:
        v = np.asarray(polygon, dtype=float)
    if len(v) > 1 and np.allclose(v[0], v[-1]):
        v = v[:-1]
    return v


def ahlfors_constant(polygon, samples: int = 64) -> CurveQualityReport:
    """Max over sampled pairs ``(a, b)`` of ``diam(smaller arc) / |a - b|``.

    Samples are equally spaced in arclength.  The arc diameter accounts for
    every polygon vertex on the arc.  The smaller arc is the one of smaller
    diameter; ties go to the arc with fewer vertices.
    """
    v = _closed_vertices(polygon)
    check_simple(v)
    if samples < 3:
        raise ValueError("need at least 3 samples")
    edges = np.roll(v, -1, axis=0) - v
    lens = np.hypot(edges[:, 0], edges[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    total = cum[-1]
    s = total * np.arange(samples) / samples
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(v) - 1)
    t = (s - cum[k]) / lens[k]
    sp = v[k] + t[:, None] * edges[k]
    # merged cyclic sequence of vertices and samples, ordered by arclength
    pos = np.concatenate([cum[:-1], s])
    pts = np.concatenate([v, sp])
    is_sample = np.concatenate([np.zeros(len(v), bool), np.ones(samples, bool)])
    order = np.lexsort((~is_sample, pos))
    pts, is_sample = pts[order], is_sample[order]
    N = len(pts)
    sample_idx = np.flatnonzero(is_sample)
    P = np.concatenate([pts, pts])
    D = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1))
    # diam[a][m]: diameter of the forward arc of m steps starting at merged index a
    diam = {}
    for a in sample_idx:
        sub = np.triu(D[a:a + N + 1, a:a + N + 1])
        diam[a] = np.maximum.accumulate(sub.max(axis=0))
    best, arg = 1.0, (0, 0)
    for ia, a in enumerate(sample_idx):
        for ib in range(ia + 1, len(sample_idx)):
            b = sample_idx[ib]
            chord = D[a, b]
            if chord == 0:
                continue
            j = b - a
            d_fwd, d_bwd = diam[a][j], diam[b][N - j]
            small = d_fwd if (d_fwd < d_bwd or (d_fwd == d_bwd and j <= N - j)) else d_bwd
            if small / chord > best:
                best, arg = small / chord, (ia, ib)
    return CurveQualityReport(float(best), arg, samples, len(v))


def cusp_polygon(depth: float, width: float = 0.2) -> np.ndarray:
    """Unit square with an inward spike of the given ``depth`` and base ``width``.

    Shrinking ``width`` at fixed depth drives the spike angle to zero.
    """
    w = width / 2
    base = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (w, 1.0), (0.0, 1.0 - depth), (-w, 1.0), (-1.0, 1.0)]
    return np.asarray(base, dtype=float)
