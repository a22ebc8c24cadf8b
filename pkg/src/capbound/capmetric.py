"""Upper bounds for the conformal capacitary distance by curve optimization.

For a reference pair ``(F, V)`` with ``F`` inside ``V`` inside the domain, the
objective of a curve ``l`` is::

    sqrt(cp(F, l \\ V)) + sqrt(cp(boundary, l & V))

evaluated on the covering cells of ``l``.  The distance is the infimum over
curves; every value computed here is the objective of an explicit curve and
therefore an upper bound.

Search strategy: seed curves (straight chord, taut grid shortest path, three
detours pushed toward the boundary, caller-supplied curves) followed by random
single-vertex perturbation on a coarse grid (``2h``).  After each round the
current best is re-evaluated on the working grid; the returned curve is the
best working-grid evaluation seen, so seeds are never beaten by the result.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csgraph, csr_matrix

from .capacity import CellCapacity
from .errors import (
    CapboundError, CurveEscapesDomain, GeometryError, PreconditionError, UnreachablePair,
)
from .geometry import (
    BoxRegion, DiskRegion, DomainSpec, Disk, GridMask, PlateSpec, Point, PolygonRegion, Polyline, Shape,
    as_point, build_mask, covering_cells, rasterize_plate,
)

# working-grid capacities of larger cell sets use one direct solve rather than
# one Green column per cell
DIRECT_ABOVE = 48


@dataclass(frozen=True)
class Budget:
    """Optimizer effort. Increasing ``rounds`` extends the same search trajectory."""

    rounds: int = 6
    moves_per_round: int = 24
    vertices: int = 17
    coarse: bool = True


@dataclass(frozen=True)
class MetricConfig:
    domain: DomainSpec
    F: PlateSpec
    V: Shape
    h: float
    budget: Budget = Budget()
    seed: int = 0
    noise_floor: float = 1e-3

    def __post_init__(self):
        if not isinstance(self.V, (DiskRegion, BoxRegion, PolygonRegion)):
            raise PreconditionError("V must be a closed disk, an axis-aligned box or a filled polygon")
        if self.F.role != "inner_continuum":
            raise PreconditionError("F must be an inner continuum")
        _check_chain(self)

    def with_budget(self, **kw) -> "MetricConfig":
        from dataclasses import replace
        return replace(self, budget=replace(self.budget, **kw))

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "F": self.F.to_dict(), "V": self.V.to_dict(),
                "h": self.h, "seed": self.seed, "noise_floor": self.noise_floor,
                "budget": {"rounds": self.budget.rounds, "moves_per_round": self.budget.moves_per_round,
                           "vertices": self.budget.vertices, "coarse": self.budget.coarse}}


def _check_chain(cfg: MetricConfig) -> None:
    """F inside V, V closed inside the open domain, F connected — all checked on the grid."""
    lvl = _level(cfg.domain, cfg.F, cfg.V, cfg.h)
    x, y = lvl.mask.centers(lvl.F_cells)
    if not cfg.V.contains(x, y).all():
        raise PreconditionError("F is not contained in V at this resolution")
    v_cells = lvl.mask.cover(cfg.V)
    if not lvl.mask.interior.flat[v_cells].all():
        raise PreconditionError("closure of V is not inside the domain at this resolution")
    img = np.zeros(lvl.mask.shape, dtype=bool)
    img.flat[lvl.F_cells] = True
    if ndimage.label(img, structure=np.ones((3, 3)))[1] != 1:
        raise PreconditionError("F is not connected at this resolution")


@dataclass(eq=False)
class _Level:
    """Everything needed to evaluate objectives at one resolution."""

    mask: GridMask
    F_cells: np.ndarray
    inV: np.ndarray  # flat bool: cell centre in V
    capF: CellCapacity
    capB: CellCapacity

    @functools.cached_property
    def graph(self) -> csr_matrix:
        return _grid_graph(self.mask)

    @functools.cached_property
    def near_boundary(self) -> tuple[np.ndarray, np.ndarray]:
        """(distance to nearest non-interior cell centre, index arrays of that cell)."""
        d, (ii, jj) = ndimage.distance_transform_edt(self.mask.interior, return_indices=True)
        return d * self.mask.h, np.stack([ii, jj])


@functools.lru_cache(maxsize=6)
def _level(domain: DomainSpec, F: PlateSpec, V: Shape, h: float) -> _Level:
    mask = build_mask(domain, h)
    F_cells = rasterize_plate(F, mask)
    x, y = mask.centers()
    inV = V.contains(x, y).ravel()
    return _Level(mask, F_cells, inV, CellCapacity(mask, F_cells, 192 * 2 ** 20),
                  CellCapacity(mask, "boundary", 192 * 2 ** 20))


def level_for(config: MetricConfig, coarse: bool = False) -> _Level:
    h = 2 * config.h if coarse else config.h
    return _level(config.domain, config.F, config.V, h)


def _grid_graph(mask: GridMask) -> csr_matrix:
    """8-connected graph on interior cells; diagonal steps need both orthogonal cells interior."""
    inter = mask.interior
    nx, ny = mask.shape
    flat = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, w = [], [], []
    h = mask.h
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        pi, qi = _shift(di, nx)
        pj, qj = _shift(dj, ny)
        ok = inter[pi, pj] & inter[qi, qj]
        if di and dj:
            ok &= inter[qi, pj] & inter[pi, qj]
        sl_p, sl_q = (pi, pj), (qi, qj)
        p = flat[sl_p][ok]
        q = flat[sl_q][ok]
        rows += [p, q]
        cols += [q, p]
        step = h * (math.sqrt(2) if di and dj else 1.0)
        w += [np.full(p.size, step)] * 2
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return csr_matrix((np.concatenate(w), (r, c)), shape=(nx * ny, nx * ny))


def _shift(d: int, n: int) -> tuple[slice, slice]:
    return (slice(0, n - d), slice(d, n)) if d >= 0 else (slice(-d, n), slice(0, n + d))


def dijkstra_tree(level: _Level, source: int) -> tuple[np.ndarray, np.ndarray]:
    dist, pred = csgraph.dijkstra(level.graph, directed=False, indices=int(source),
                                  return_predecessors=True)
    return dist, pred


def path_from_tree(pred: np.ndarray, source: int, target: int) -> list[int]:
    path = [int(target)]
    while path[-1] != source:
        p = int(pred[path[-1]])
        if p < 0:
            raise UnreachablePair("no interior path joins the two points")
        path.append(p)
    return path[::-1]


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceEstimate:
    value: float
    curve: Polyline
    term_F: float
    term_boundary: float
    bound_kind: str = "upper"
    h: float = 0.0
    evaluations: int = 0


def _terms(curve: Polyline, lvl: _Level, direct_above: int | None = DIRECT_ABOVE
           ) -> tuple[float, float] | None:
    cells = covering_cells(curve, lvl.mask)
    if not lvl.mask.interior.flat[cells].all():
        return None
    inV = lvl.inV[cells]
    cF = lvl.capF(cells[~inV], direct_above)
    cB = lvl.capB(cells[inV], direct_above)
    return math.sqrt(cF), math.sqrt(cB)


def objective(curve: Polyline, config: MetricConfig) -> DistanceEstimate:
    """Objective of one curve at the working resolution (the degenerate curve scores 0)."""
    if curve.degenerate:
        return DistanceEstimate(0.0, curve, 0.0, 0.0, h=config.h, evaluations=0)
    t = _terms(curve, level_for(config))
    if t is None:
        raise CurveEscapesDomain("curve covering cells leave the interior")
    return DistanceEstimate(t[0] + t[1], curve, t[0], t[1], h=config.h, evaluations=1)


def _valid(curve_arr: np.ndarray, mask: GridMask) -> bool:
    try:
        cells = covering_cells(Polyline.from_array(curve_arr), mask)
    except ValueError:
        return False
    return bool(mask.interior.flat[cells].all())


def _segment_ok(a, b, mask: GridMask) -> bool:
    return _valid(np.array([a, b]), mask)


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------


def _taut(points: np.ndarray, mask: GridMask) -> np.ndarray:
    """Greedy string pulling: keep the farthest directly visible vertex at each step."""
    out = [points[0]]
    i, m = 0, len(points) - 1
    while i < m:
        step, j = 1, i + 1
        while i + 2 * step <= m and _segment_ok(points[i], points[i + 2 * step], mask):
            step *= 2
        lo, hi = i + step, min(m, i + 2 * step)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _segment_ok(points[i], points[mid], mask):
                lo = mid
            else:
                hi = mid
        j = hi if hi != lo and _segment_ok(points[i], points[hi], mask) else lo
        out.append(points[j])
        i = j
    return np.asarray(out)


def _subdivide(poly: np.ndarray, k: int) -> np.ndarray:
    """Insert vertices along the existing segments until there are at least ``k`` (shape preserved)."""
    n = len(poly)
    if n >= k:
        return poly
    seg = np.hypot(*np.diff(poly, axis=0).T)
    extra = k - n
    share = np.floor(extra * seg / seg.sum()).astype(int)
    rest = extra - share.sum()
    order = np.argsort(-(extra * seg / seg.sum() - share), kind="stable")
    share[order[:rest]] += 1
    out = [poly[0]]
    for s in range(n - 1):
        for t in range(1, share[s] + 2):
            out.append(poly[s] + (poly[s + 1] - poly[s]) * t / (share[s] + 1))
    return np.asarray(out)


def _resample(poly: np.ndarray, k: int) -> np.ndarray:
    seg = np.hypot(*np.diff(poly, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, s[-1], k)
    return np.column_stack([np.interp(t, s, poly[:, 0]), np.interp(t, s, poly[:, 1])])


def grid_path(x: Point, y: Point, lvl: _Level) -> np.ndarray:
    """Taut polyline through the 8-connected shortest cell path from x to y."""
    mask = lvl.mask
    cx, cy = mask.cell_of([x, y])
    if cx < 0 or cy < 0 or not (mask.interior.flat[cx] and mask.interior.flat[cy]):
        raise CurveEscapesDomain("endpoint is not in an interior cell")
    _, pred = dijkstra_tree(lvl, cx)
    cells = path_from_tree(pred, cx, cy)
    px, py = mask.centers(np.asarray(cells))
    pts = np.column_stack([px, py])
    pts[0] = x
    pts[-1] = y
    return _taut(pts, mask)


def _offset(poly: np.ndarray, lvl: _Level, frac: float) -> np.ndarray | None:
    """Push interior vertices toward the nearest boundary by ``frac`` of their clearance."""
    mask = lvl.mask
    dist, idx = lvl.near_boundary
    n = len(poly)
    out = poly.copy()
    for v in range(1, n - 1):
        c = mask.cell_of([poly[v]])[0]
        if c < 0:
            return None
        i, j = divmod(int(c), mask.shape[1])
        d = dist[i, j]
        target = np.array([mask.xs[idx[0, i, j]], mask.ys[idx[1, i, j]]])
        direc = target - poly[v]
        norm = np.hypot(*direc)
        if norm == 0:
            continue
        s = v / (n - 1)
        taper = min(1.0, 3 * min(s, 1 - s))
        move = frac * max(d - 1.5 * mask.h, 0.0) * taper
        out[v] = poly[v] + direc / norm * move
    return out


def seed_curves(x: Point, y: Point, config: MetricConfig, lvl: _Level,
                extra: Sequence[Polyline] = ()) -> list[np.ndarray]:
    k = max(3, config.budget.vertices)
    mask = lvl.mask
    seeds = []
    chord = np.array([x, y], dtype=float)
    if _valid(chord, mask):
        seeds.append(_resample(chord, k))
    taut = grid_path(x, y, lvl)
    base = _subdivide(taut, k)
    seeds.append(base)
    res = _resample(taut, k)
    if _valid(res, mask):
        base = res
        seeds.append(res)
    for frac in (1 / 3, 2 / 3, 1.0):
        f = frac
        for _ in range(4):
            off = _offset(base, lvl, f)
            if off is not None and _valid(off, mask):
                seeds.append(off)
                break
            f *= 0.5
    for c in extra:
        arr = c.array
        if len(arr) >= 2 and _valid(arr, mask):
            seeds.append(arr)
    return seeds


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def _key(curve: Polyline) -> tuple:
    return tuple(curve.vertices)


def _better(a: DistanceEstimate, b: DistanceEstimate | None) -> bool:
    """Deterministic order: by value, then lexicographically by curve."""
    if b is None:
        return True
    return (a.value, _key(a.curve)) < (b.value, _key(b.curve))


def _eval(arr: np.ndarray, lvl: _Level, ends: Sequence[Point] = ()) -> float:
    """Search-level score; Green columns are reused between neighbouring candidates.

    Non-interior cells within two cells of one of ``ends`` are dropped rather
    than rejected, so the coarse grid can steer curves whose endpoints sit
    closer to the boundary than it resolves.  Only working-grid evaluations
    are ever returned, so this proxy never affects a reported value directly.
    """
    try:
        curve = Polyline.from_array(arr)
    except ValueError:
        return math.inf
    mask = lvl.mask
    cells = covering_cells(curve, mask)
    ok = mask.interior.flat[cells]
    if not ok.all():
        if not ends:
            return math.inf
        cx, cy = mask.centers(cells[~ok])
        near = np.zeros(cx.shape, dtype=bool)
        for e in ends:
            near |= np.maximum(np.abs(cx - e.x), np.abs(cy - e.y)) <= 2 * mask.h
        if not near.all():
            return math.inf
        cells = cells[ok]
    inV = lvl.inV[cells]
    return math.sqrt(lvl.capF(cells[~inV])) + math.sqrt(lvl.capB(cells[inV]))


def rho(x, y, config: MetricConfig, extra_curves: Sequence[Polyline] = ()) -> DistanceEstimate:
    """Upper bound of the capacitary distance between two interior points."""
    x, y = as_point(x), as_point(y)
    if x == y:
        return DistanceEstimate(0.0, Polyline((x,)), 0.0, 0.0, h=config.h)
    flip = (y.x, y.y) < (x.x, x.y)
    a, b = (y, x) if flip else (x, y)
    extra = [c.reversed() if flip else c for c in extra_curves]
    est = _search(a, b, config, extra)
    if flip:
        est = DistanceEstimate(est.value, est.curve.reversed(), est.term_F, est.term_boundary,
                               est.bound_kind, est.h, est.evaluations)
    return est


def _search(x: Point, y: Point, config: MetricConfig, extra: Sequence[Polyline]) -> DistanceEstimate:
    fine = level_for(config)
    for p in (x, y):
        c = fine.mask.cell_of([p])[0]
        if c < 0 or not fine.mask.interior.flat[c]:
            raise CurveEscapesDomain(f"point {tuple(p)} is not interior at h={config.h:.6g}")
    seeds = seed_curves(x, y, config, fine, extra)
    evals = 0
    best: DistanceEstimate | None = None
    for s in seeds:
        t = _terms(Polyline.from_array(s), fine)
        evals += 1
        if t is None:
            continue
        cand = DistanceEstimate(t[0] + t[1], Polyline.from_array(s), t[0], t[1], h=config.h)
        if _better(cand, best):
            best = cand
    if best is None:
        raise CurveEscapesDomain("no admissible seed curve joins the points")

    search = fine
    if config.budget.coarse:
        try:
            coarse = level_for(config, coarse=True)
            search = coarse
        except (GeometryError, PreconditionError):
            search = fine
    ends = (x, y) if search is not fine else ()
    scored = [(_eval(s, search, ends), i) for i, s in enumerate(seeds)]
    evals += len(seeds)
    finite = [t for t in scored if math.isfinite(t[0])]
    if not finite and search is not fine:
        search, ends = fine, ()
        scored = [(_eval(s, search), i) for i, s in enumerate(seeds)]
        finite = [t for t in scored if math.isfinite(t[0])]
    if not finite:
        return _finish(best, evals)
    cur_val, i0 = min(finite)
    cur = seeds[i0].copy()
    k = len(cur)
    if k < 3:
        return _finish(best, evals)
    scale = max(math.hypot(y.x - x.x, y.y - x.y), 4 * config.h)
    sigma = 0.1 * scale
    lo_s, hi_s = 0.25 * search.mask.h, 0.5 * scale
    for r in range(config.budget.rounds):
        rng = np.random.default_rng([config.seed, r])
        for _ in range(config.budget.moves_per_round):
            i = int(rng.integers(1, k - 1))
            delta = rng.normal(0.0, sigma, 2)
            width = int(rng.integers(0, 3))
            cand = cur.copy()
            for j in range(max(1, i - width), min(k - 1, i + width + 1)):
                cand[j] += delta * (1.0 - abs(j - i) / (width + 1))
            val = _eval(cand, search, ends)
            evals += 1
            if val < cur_val:
                cur, cur_val = cand, val
                sigma = min(hi_s, sigma * 1.5)
            else:
                sigma = max(lo_s, sigma * 0.85)
        t = _terms(Polyline.from_array(cur), fine)
        evals += 1
        if t is not None:
            cand = DistanceEstimate(t[0] + t[1], Polyline.from_array(cur), t[0], t[1], h=config.h)
            if _better(cand, best):
                best = cand
    return _finish(best, evals)


def _finish(best: DistanceEstimate, evals: int) -> DistanceEstimate:
    return DistanceEstimate(best.value, best.curve, best.term_F, best.term_boundary, "upper",
                            best.h, evals)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TriangleReport:
    ratios: tuple[float, ...]
    worst: float
    slack: float
    passed: bool
    rows: tuple[tuple[float, float, float], ...]  # (rho_xy, rho_xz, rho_zy)


def triangle_check(samples: Iterable[tuple], config: MetricConfig, slack: float = 1.10) -> TriangleReport:
    """Check ``rho(x,y) <= slack * (rho(x,z) + rho(z,y))`` on each triple.

    The concatenation of the two optimized legs is offered to the x-y search as
    an extra seed, since it is an admissible curve from x to y.
    """
    ratios, rows = [], []
    for x, y, z in samples:
        x, y, z = as_point(x), as_point(y), as_point(z)
        xz = rho(x, z, config)
        zy = rho(z, y, config)
        extra = []
        if not xz.curve.degenerate and not zy.curve.degenerate:
            try:
                extra.append(xz.curve.concat(zy.curve))
            except ValueError:
                pass
        xy = rho(x, y, config, extra_curves=extra)
        rhs = xz.value + zy.value
        ratios.append(0.0 if xy.value == 0 else (math.inf if rhs == 0 else xy.value / rhs))
        rows.append((xy.value, xz.value, zy.value))
    worst = max(ratios) if ratios else 0.0
    return TriangleReport(tuple(ratios), worst, slack, worst <= slack, tuple(rows))


@dataclass(frozen=True)
class EquivalenceReport:
    K: float
    ratios: tuple[float, ...]
    excluded: int
    values: tuple[tuple[float, float], ...]


def equivalence_check(config1: MetricConfig, config2: MetricConfig, samples: Iterable[tuple]
                      ) -> EquivalenceReport:
    """Empirical ``K = max max(rho1/rho2, rho2/rho1)`` over pairs above both noise floors."""
    if config1.domain != config2.domain:
        raise PreconditionError("equivalence check needs both configs on the same domain")
    ratios, values, excluded = [], [], 0
    for x, y in samples:
        r1 = rho(x, y, config1).value
        r2 = r1 if config2 == config1 else rho(x, y, config2).value
        values.append((r1, r2))
        if r1 <= config1.noise_floor or r2 <= config2.noise_floor:
            excluded += 1
            continue
        ratios.append(max(r1 / r2, r2 / r1))
    K = max(ratios) if ratios else math.nan
    return EquivalenceReport(K, tuple(ratios), excluded, tuple(values))


@dataclass(frozen=True)
class TopologyReport:
    radii: tuple[float, ...]
    min_rho: tuple[float, ...]
    all_positive: bool
    decreasing: bool


def topology_check(x0, radii: Sequence[float], config: MetricConfig, n_angles: int = 8) -> TopologyReport:
    """Minimum of rho over points on Euclidean circles around ``x0``; positivity and monotonicity."""
    x0 = as_point(x0)
    mins, positive = [], True
    for r in radii:
        vals = []
        for k in range(n_angles if r > 0 else 1):
            t = 2 * math.pi * k / n_angles
            y = Point(x0.x + r * math.cos(t), x0.y + r * math.sin(t))
            vals.append(rho(x0, y, config).value)
        m = min(vals)
        mins.append(m)
        if r > 0 and m <= 0:
            positive = False
    order = np.argsort(-np.asarray(radii, dtype=float), kind="stable")
    ms = np.asarray(mins)[order]
    decreasing = bool(np.all(np.diff(ms) < 0))
    return TopologyReport(tuple(radii), tuple(mins), positive, decreasing)


def default_disk_config(h: float = 1 / 64, **kw) -> MetricConfig:
    """Unit disk with F = disk(0, 0.1) and V = disk(0, 0.25)."""
    return MetricConfig(Disk(Point(0.0, 0.0), 1.0), PlateSpec.of(DiskRegion(Point(0.0, 0.0), 0.1)),
                        DiskRegion(Point(0.0, 0.0), 0.25), h, **kw)


def asymptotic_config(h: float = 1 / 128, **kw) -> MetricConfig:
    """Unit disk with (F, V) placed off the x-axis segment used by :func:`asymptotic_ratio`."""
    return MetricConfig(Disk(Point(0.0, 0.0), 1.0),
                        PlateSpec.of(DiskRegion(Point(-0.6, 0.0), 0.05)),
                        DiskRegion(Point(-0.6, 0.0), 0.15), h, **kw)


@dataclass(frozen=True)
class AsymptoticRatioRow:
    eps: float
    rho: float
    ratio: float


def asymptotic_ratio(eps_list: Iterable[float], config: MetricConfig | None = None
                     ) -> list[AsymptoticRatioRow]:
    """Rows ``(eps, rho((0,0),(eps,0)), rho/eps)``."""
    config = config or asymptotic_config()
    rows = []
    for eps in eps_list:
        r = rho(Point(0.0, 0.0), Point(float(eps), 0.0), config).value
        rows.append(AsymptoticRatioRow(float(eps), r, r / eps if eps else 0.0))
    return rows
