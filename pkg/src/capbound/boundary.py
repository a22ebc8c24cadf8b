"""Operational capacitary boundary: Cauchy profiles, element identification, impressions.

A boundary element is represented by finitely many interior point sequences
marching toward the boundary.  Distances are the upper bounds of
:mod:`capbound.capmetric`, so classification is phrased with a tolerance and a
3x hysteresis gap between the SAME and DISTINCT thresholds.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csgraph

from . import capmetric
from .capmetric import MetricConfig, level_for
from .errors import PreconditionError
from .geometry import (
    CantorFan, Comb, DomainSpec, GridMask, Point, Polyline, as_point, build_mask,
)

SAME, DISTINCT, INCONCLUSIVE = "SAME", "DISTINCT", "INCONCLUSIVE"


@functools.lru_cache(maxsize=8192)
def distance(x: Point, y: Point, config: MetricConfig) -> float:
    """Memoized, order-independent rho upper bound."""
    if (y.x, y.y) < (x.x, x.y):
        x, y = y, x
    return capmetric.rho(x, y, config).value


@dataclass(frozen=True)
class BoundarySequence:
    points: tuple[Point, ...]
    tag: str
    depths: tuple[int, ...] = ()

    def __post_init__(self):
        pts = tuple(as_point(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("empty boundary sequence")
        if not self.depths:
            object.__setattr__(self, "depths", tuple(range(1, len(pts) + 1)))
        if len(self.depths) != len(pts):
            raise ValueError("depth labels must match points")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def deepest(self) -> Point:
        return self.points[-1]

    def validate(self, domain: DomainSpec, h: float | None = None) -> None:
        """Points must be interior (of the mask at ``h`` if given) and approach the boundary."""
        arr = np.asarray(self.points)
        if not domain.contains(arr[:, 0], arr[:, 1]).all():
            raise PreconditionError(f"{self.tag}: point outside the domain")
        d = domain.boundary_distance(arr[:, 0], arr[:, 1])
        if len(self.points) > 1 and not np.all(np.diff(d) < 0) and len(set(self.points)) > 1:
            raise PreconditionError(f"{self.tag}: boundary distance is not strictly decreasing")
        if h is not None:
            mask = build_mask(domain, h)
            cells = mask.cell_of(arr)
            if (cells < 0).any() or not mask.interior.flat[cells].all():
                raise PreconditionError(f"{self.tag}: point not in an interior cell at h={h:.6g}")


# ---------------------------------------------------------------------------
# Sequence generators
# ---------------------------------------------------------------------------


def radial(theta: float, depths: Iterable[int], center=(0.0, 0.0), radius: float = 1.0,
           twist: float = 0.0) -> BoundarySequence:
    """Points ``center + radius (1 - 2^-n) e^{i (theta + twist 2^-n)}``."""
    c = as_point(center)
    depths = tuple(depths)
    pts = []
    for n in depths:
        r = radius * (1 - 2.0 ** -n)
        t = theta + twist * 2.0 ** -n
        pts.append(Point(c.x + r * math.cos(t), c.y + r * math.sin(t)))
    tag = f"radial({theta:.6g}" + (f",twist={twist:.6g})" if twist else ")")
    return BoundarySequence(tuple(pts), tag, depths)


def comb_channel(x: float, levels: int, bottom: bool = True) -> BoundarySequence:
    """Mid-channel points ``(x, 1.5 * 3^-n)`` for n = 1..levels, then the middle of the bottom strip."""
    comb = Comb(levels)
    pts = [Point(x, comb.channel_mid(n)) for n in range(1, levels + 1)]
    depths = list(range(1, levels + 1))
    if bottom:
        pts.append(Point(x, 0.5 * 3.0 ** -levels))
        depths.append(levels + 1)
    return BoundarySequence(tuple(pts), f"comb-channel({x:.6g})", tuple(depths))


def fan_sector(k: int, depth: int, depths: Iterable[int], scale: float = 1.0) -> BoundarySequence:
    """Points on the bisector of sector ``k`` of the depth-``depth`` fan at radii ``scale 2^-n``."""
    lo, hi = CantorFan(depth).sector_angles()[k]
    t = 0.5 * (lo + hi)
    depths = tuple(depths)
    pts = tuple(Point(scale * 2.0 ** -n * math.cos(t), scale * 2.0 ** -n * math.sin(t)) for n in depths)
    return BoundarySequence(pts, f"fan-sector({k})", depths)


def slit_side(x0: float, side: int, depths: Iterable[int], scale: float = 1.0) -> BoundarySequence:
    """Points ``(x0, side * scale * 2^-n)`` approaching a horizontal slit from one side."""
    depths = tuple(depths)
    pts = tuple(Point(x0, side * scale * 2.0 ** -n) for n in depths)
    return BoundarySequence(pts, f"slit-side({x0:.6g},{'+' if side > 0 else '-'})", depths)


# ---------------------------------------------------------------------------
# Cauchy profiles and classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CauchyProfile:
    depths: tuple[int, ...]
    values: tuple[float, ...]  # max rho over pairs at or beyond each depth
    decreasing: bool

    def rows(self) -> list[tuple[int, float]]:
        return list(zip(self.depths, self.values))


def pairwise(points: Sequence[Point], config: MetricConfig) -> np.ndarray:
    n = len(points)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = distance(points[i], points[j], config)
    return D


def _trend(values: Sequence[float]) -> bool:
    """Non-increasing up to 2% wobble and strictly lower at the end than at the start (or all zero)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2 or np.all(v == 0):
        return True
    return bool(np.all(np.diff(v) <= 0.02 * v[:-1]) and v[-1] < v[0])


def resolved(seq: BoundarySequence, config: MetricConfig) -> BoundarySequence:
    """The prefix of ``seq`` whose points lie in interior cells at the metric's resolution.

    Sequences may run deeper than the metric grid resolves (a finer grid
    function can still be sampled there); classification uses this prefix.
    """
    mask = level_for(config).mask
    cells = mask.cell_of(np.asarray(seq.points))
    ok = (cells >= 0) & mask.interior.flat[np.maximum(cells, 0)]
    n = len(ok) if ok.all() else int(np.argmin(ok))
    if n == 0:
        raise PreconditionError(f"{seq.tag}: first point is not resolvable at h={config.h:.6g}")
    if n == len(seq):
        return seq
    return BoundarySequence(seq.points[:n], seq.tag, seq.depths[:n])


def cauchy_profile(seq: BoundarySequence, config: MetricConfig) -> CauchyProfile:
    """``(depth_k, max rho(x_i, x_j) over k <= i < j)`` for every depth with a pair.

    Only the resolvable prefix (see :func:`resolved`) enters.
    """
    seq = resolved(seq, config)
    if len(seq) < 3:
        raise PreconditionError("cauchy profile needs at least 3 points")
    D = pairwise(seq.points, config)
    n = len(seq)
    vals = tuple(float(D[k:, k:].max()) for k in range(n - 1))
    return CauchyProfile(seq.depths[:-1], vals, _trend(vals))


@dataclass(frozen=True)
class Verdict:
    verdict: str
    tol: float
    cross: tuple[float, ...]  # rho(a_k, b_k) at the compared depths, shallow to deep
    depths: tuple[int, ...]

    @property
    def deepest(self) -> float:
        return self.cross[-1]


def same_element(seq1: BoundarySequence, seq2: BoundarySequence, config: MetricConfig, tol: float,
                 compare: int = 2) -> Verdict:
    """Classify two sequences by their cross distances at the ``compare`` deepest depths.

    The interleaved sequence ``a_1, b_1, ..., a_N, b_N`` has its deepest profile
    entry equal to ``rho(a_N, b_N)``: SAME when that is below ``tol``.  DISTINCT
    when every compared cross distance exceeds ``3 tol`` (it has stabilized
    above the hysteresis gap).  Otherwise INCONCLUSIVE.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    seq1, seq2 = resolved(seq1, config), resolved(seq2, config)
    m = min(len(seq1), len(seq2))
    compare = max(1, min(compare, m))
    a = seq1.points[len(seq1) - compare:]
    b = seq2.points[len(seq2) - compare:]
    cross = tuple(distance(p, q, config) for p, q in zip(a, b))
    if cross[-1] < tol:
        v = SAME
    elif all(c > 3 * tol for c in cross):
        v = DISTINCT
    else:
        v = INCONCLUSIVE
    return Verdict(v, tol, cross, tuple(seq1.depths[len(seq1) - compare:]))


@dataclass(frozen=True, eq=False)
class BoundaryElementEstimate:
    members: tuple[BoundarySequence, ...]
    distances: np.ndarray  # pairwise rho between the members' deepest points
    profiles: tuple[CauchyProfile, ...]
    tol: float
    realization_cells: np.ndarray | None = None
    h: float = 0.0

    @property
    def deepest(self) -> Point:
        return self.members[0].deepest

    @property
    def cauchy_profile(self) -> tuple[float, ...]:
        """Worst member profile per depth."""
        n = min(len(p.values) for p in self.profiles)
        return tuple(max(p.values[k] for p in self.profiles) for k in range(n))


def element(members: Sequence[BoundarySequence], config: MetricConfig, tol: float,
            check_profiles: bool = True) -> BoundaryElementEstimate:
    """Group sequences into one element; every pair of members must classify SAME."""
    members = tuple(members)
    if not members:
        raise ValueError("an element needs at least one sequence")
    profiles = tuple(cauchy_profile(s, config) for s in members) if check_profiles else ()
    for k, m in enumerate(members):
        for other in members[k + 1:]:
            v = same_element(m, other, config, tol, compare=1)
            if v.verdict != SAME:
                raise PreconditionError(f"{m.tag} and {other.tag} are not SAME ({v.verdict}, "
                                        f"rho={v.deepest:.4g}, tol={tol:.4g})")
    D = pairwise([resolved(m, config).deepest for m in members], config)
    return BoundaryElementEstimate(members, D, profiles, tol, None, config.h)


# ---------------------------------------------------------------------------
# Realization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Realization:
    cells: np.ndarray  # realization estimate (cells of the smallest capacitary disk)
    eps_list: tuple[float, ...]
    per_eps: tuple[np.ndarray, ...]  # S_eps for each eps, in the given order
    probes: np.ndarray
    values: np.ndarray  # quick rho from the anchor to each probe (inf when pruned)
    anchor: Point
    mask: GridMask

    @property
    def h(self) -> float:
        return self.mask.h

    @property
    def diameter(self) -> float:
        return cell_diameter(self.cells, self.mask)

    def contains_point(self, p, radius_cells: float = 1.0) -> bool:
        """Whether some realization cell centre is within Chebyshev distance ``radius_cells * h`` of ``p``."""
        if self.cells.size == 0:
            return False
        x, y = self.mask.centers(self.cells)
        p = as_point(p)
        d = np.maximum(np.abs(x - p.x), np.abs(y - p.y))
        return bool(np.any(d <= radius_cells * self.h * (1 + 1e-9)))


def probe_cells(config: MetricConfig, anchor: Point, band: float = 10.0, max_probes: int = 600,
                near: float = 4.0) -> np.ndarray:
    """Interior cells within ``band * h`` of the boundary, deterministically thinned.

    Cells within ``near * h`` of the anchor are always kept.
    """
    lvl = level_for(config)
    mask = lvl.mask
    dist, _ = lvl.near_boundary
    cand = np.flatnonzero(mask.interior.ravel() & (dist.ravel() <= band * mask.h))
    x, y = mask.centers(cand)
    close = np.hypot(x - anchor.x, y - anchor.y) <= near * mask.h
    keep = cand[close]
    rest = cand[~close]
    if rest.size > max_probes:
        stride = int(math.ceil(rest.size / max_probes))
        rest = rest[::stride]
    return np.union1d(keep, rest)


def quick_distances(anchor: Point, probes: np.ndarray, config: MetricConfig, cutoff: float = math.inf,
                    band: float = 10.0) -> np.ndarray:
    """Objective of a grid shortest path from ``anchor`` to each probe (an upper bound of rho).

    Paths run inside the boundary band (interior cells within ``band * h`` of
    the boundary) so they hug the boundary.  Probes are processed by increasing
    path length; once a probe's value reaches ``cutoff`` every probe whose path
    runs through it is skipped (capacity is monotone in the set, so its value
    could only be larger).  Skipped or unreachable probes get ``inf``.
    """
    lvl = level_for(config)
    mask = lvl.mask
    src = int(mask.cell_of([anchor])[0])
    if src < 0 or not mask.interior.flat[src]:
        raise PreconditionError("anchor is not an interior point")
    dist_b, _ = lvl.near_boundary
    in_band = mask.interior.ravel() & (dist_b.ravel() <= band * mask.h)
    in_band[src] = True
    cells = np.flatnonzero(in_band)
    local = np.full(mask.size, -1, dtype=np.int64)
    local[cells] = np.arange(cells.size)
    root = int(local[src])
    sub = lvl.graph[cells][:, cells]
    dist, pred = csgraph.dijkstra(sub, directed=False, indices=root, return_predecessors=True)
    lp = local[probes]
    dp = np.where(lp >= 0, dist[np.maximum(lp, 0)], np.inf)
    order = np.argsort(dp, kind="stable")
    out = np.full(probes.size, math.inf)
    blocked = np.zeros(cells.size, dtype=bool)
    for k in order:
        if not np.isfinite(dp[k]):
            continue
        target = int(lp[k])
        path = capmetric.path_from_tree(pred, root, target)
        if blocked[path].any():
            blocked[target] = True
            continue
        if len(path) == 1:
            out[k] = 0.0
            continue
        px, py = mask.centers(cells[np.asarray(path)])
        pts = np.column_stack([px, py])
        pts[0] = anchor
        keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
        t = capmetric._terms(Polyline.from_array(pts[keep]), lvl)
        val = math.inf if t is None else t[0] + t[1]
        out[k] = val
        if val >= cutoff:
            blocked[target] = True
    return out


def realization(elem: BoundaryElementEstimate, eps_list: Sequence[float], config: MetricConfig,
                band: float = 10.0, max_probes: int = 600) -> Realization:
    """Cells of the capacitary disks ``{probe: rho(anchor, probe) < eps}``, intersected over ``eps``.

    The disks are nested in ``eps``, so the intersection is the disk of the
    smallest ``eps``.  The anchor is the deepest resolvable point of the first
    member.
    """
    eps = tuple(float(e) for e in eps_list)
    if not eps or min(eps) <= 0:
        raise ValueError("eps_list needs positive values")
    anchor = resolved(elem.members[0], config).deepest
    probes = probe_cells(config, anchor, band, max_probes)
    vals = quick_distances(anchor, probes, config, cutoff=max(eps), band=band)
    per = tuple(probes[vals < e] for e in eps)
    cells = per[int(np.argmin(eps))]
    for s in per:
        cells = np.intersect1d(cells, s)
    return Realization(cells, eps, per, probes, vals, anchor, level_for(config).mask)


def cell_diameter(cells: np.ndarray, mask) -> float:
    if len(cells) < 2:
        return 0.0
    x, y = mask.centers(np.asarray(cells))
    p = np.column_stack([x, y])
    d = np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(-1))
    return float(d.max())


# ---------------------------------------------------------------------------
# Example-specific tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CombRow:
    level: int
    y: float
    rho: float


def comb_collapse_test(levels: int, x1: float, x2: float, config: MetricConfig) -> list[CombRow]:
    """``rho((x1, y_n), (x2, y_n))`` at the mid-channel heights ``y_n`` for n = 1..levels."""
    if not (-1 < x1 < 1 and -1 < x2 < 1):
        raise PreconditionError("x positions must lie in (-1, 1)")
    comb = Comb(levels)
    build_mask(comb, config.h)  # raises UnresolvedFeature when too deep for h
    if not isinstance(config.domain, Comb) or config.domain.levels < levels:
        raise PreconditionError("config domain must be a comb with at least the requested levels")
    rows = []
    for n in range(1, levels + 1):
        y = comb.channel_mid(n)
        rows.append(CombRow(n, y, distance(Point(x1, y), Point(x2, y), config)))
    return rows


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteSettings:
    """Default configuration of one boundary suite."""

    config: MetricConfig
    tol: float
    eps: tuple[float, ...]


def suite_settings(suite: str, h: float | None = None, budget: capmetric.Budget | None = None,
                   seed: int = 0) -> SuiteSettings:
    """Calibrated defaults: the domain, the interior continuum ``F`` (hugging the
    feature under study so that cross distances stay well above the grid floor
    of rho), its neighbourhood ``V``, the classification tolerance and the
    realization radii."""
    from .geometry import Disk, DiskRegion, PlateSpec, SlitDisk

    budget = budget or capmetric.Budget(rounds=3)
    if suite == "disk":
        h = h or 1 / 128
        dom, c, r = Disk(), Point(0.0, 0.0), 1 - 8 * h
        tol, eps = 1.3, (2.6, 1.95, 1.3, 1.15)
    elif suite == "slit":
        h = h or 1 / 128
        dom, c, r = SlitDisk(), Point(-0.06, 0.0), 0.045
        tol, eps = 1.0, (1.0, 0.9)
    elif suite == "comb":
        h = h or 1 / 81
        cfg = MetricConfig(Comb(3), PlateSpec.of(DiskRegion(Point(0.0, 0.83), 0.05)),
                           DiskRegion(Point(0.0, 0.83), 0.12), h, budget, seed)
        return SuiteSettings(cfg, 0.1, (0.2, 0.1))
    elif suite == "fan":
        h = h or 1 / 64
        dom, c, r = CantorFan(2, 1.25), Point(-0.3, -0.3), 0.1
        tol, eps = 0.24, (0.8, 0.7)
    else:
        raise ValueError(f"unknown suite {suite!r}")
    cfg = MetricConfig(dom, PlateSpec.of(DiskRegion(c, r)), DiskRegion(c, r + h), h, budget, seed)
    return SuiteSettings(cfg, tol, eps)


def suite_sequences(suite: str, config: MetricConfig) -> dict[str, list]:
    """Sequences of a suite by role.

    ``elements`` are expected pairwise DISTINCT; ``controls`` are pairs expected
    SAME; ``groups`` lists the members of each exported element.  Disk radial
    sequences run deeper than the metric grid resolves so that a finer grid
    function can be traced along them.
    """
    if suite == "disk":
        els = [radial(k * math.pi / 4, range(5, 10)) for k in range(8)]
        tw = [radial(k * math.pi / 4, range(5, 10), twist=1.0) for k in range(8)]
        return {"elements": els, "controls": list(zip(els, tw)), "groups": [list(p) for p in zip(els, tw)]}
    if suite == "slit":
        up, dn = slit_side(0.5, 1, range(3, 8)), slit_side(0.5, -1, range(3, 8))
        return {"elements": [up, dn], "controls": [(slit_side(0.3, 1, range(3, 8)), up)],
                "groups": [[up], [dn]]}
    if suite == "comb":
        levels = config.domain.levels
        pair = (comb_channel(-0.5, levels), comb_channel(0.5, levels))
        return {"elements": [], "controls": [pair], "groups": [list(pair)]}
    if suite == "fan":
        els = [fan_sector(k, config.domain.depth, range(2, 7)) for k in range(4)]
        return {"elements": els, "controls": [], "groups": [[e] for e in els]}
    raise ValueError(f"unknown suite {suite!r}")


@dataclass(frozen=True)
class PairRow:
    a: str
    b: str
    role: str  # "element" or "control"
    verdict: Verdict


@dataclass(frozen=True, eq=False)
class SuiteResult:
    suite: str
    config: MetricConfig
    tol: float
    eps: tuple[float, ...]
    pairs: tuple[PairRow, ...]
    profiles: tuple[tuple[str, CauchyProfile], ...]
    realizations: tuple[tuple[str, Realization], ...]
    collapse: tuple[CombRow, ...]
    checks: dict
    groups: tuple[tuple[BoundarySequence, ...], ...] = ()

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def run_suite(suite: str, config: MetricConfig | None = None, tol: float | None = None,
              eps: Sequence[float] | None = None) -> SuiteResult:
    """Run one boundary suite and evaluate its checks.

    ``checks`` maps a check name to a bool:

    * disk: all radial elements pairwise DISTINCT; impression diameters <= 4h;
      each twisted control sequence is SAME as the straight one.
    * slit: opposite sides DISTINCT while their Euclidean limits coincide;
      two same-side sequences are SAME.
    * comb: collapse distances strictly decreasing; the bottom element (two
      channel sequences) SAME; its impression spans an x-extent >= 1.5.
    * fan: the sector elements pairwise DISTINCT; every impression contains
      the origin cell.
    """
    d = suite_settings(suite, config.h if config else None)
    config = config or d.config
    tol = d.tol if tol is None else float(tol)
    eps = d.eps if eps is None else tuple(float(e) for e in eps)
    seqs = suite_sequences(suite, config)
    h = config.h
    pairs, profiles, reals, collapse, checks = [], [], [], (), {}

    els = seqs["elements"]
    for i in range(len(els)):
        for j in range(i + 1, len(els)):
            pairs.append(PairRow(els[i].tag, els[j].tag, "element", same_element(els[i], els[j], config, tol)))
    for a, b in seqs["controls"]:
        pairs.append(PairRow(a.tag, b.tag, "control", same_element(a, b, config, tol)))
    seen = []
    for s in els + [c for pair in seqs["controls"] for c in pair]:
        if s not in seen:
            seen.append(s)
            profiles.append((s.tag, cauchy_profile(s, config)))
    ev = [p.verdict.verdict for p in pairs if p.role == "element"]
    cv = [p.verdict.verdict for p in pairs if p.role == "control"]

    if suite in ("disk", "slit", "fan"):
        for s in els:
            el = BoundaryElementEstimate((s,), np.zeros((1, 1)), (), tol, None, h)
            reals.append((s.tag, realization(el, eps, config)))
    if suite == "disk":
        checks["pairwise_distinct"] = all(v == DISTINCT for v in ev)
        checks["impression_diameter"] = all(r.diameter <= 4 * h + 1e-12 for _, r in reals)
        checks["twist_controls_same"] = all(v == SAME for v in cv)
    elif suite == "slit":
        a, b = els
        gap = math.dist(a.deepest, b.deepest)
        checks["opposite_sides_distinct"] = ev == [DISTINCT]
        checks["euclidean_limits_coincide"] = gap <= 2.0 ** -5 and gap < math.dist(a.points[0], b.points[0])
        checks["same_side_control_same"] = cv == [SAME]
    elif suite == "comb":
        levels = config.domain.levels
        collapse = tuple(comb_collapse_test(levels, -0.5, 0.5, config))
        r = [c.rho for c in collapse]
        checks["collapse_decreasing"] = all(r[k + 1] < r[k] for k in range(len(r) - 1))
        checks["bottom_element_same"] = cv == [SAME]
        el = element(seqs["groups"][0], config, tol, check_profiles=False)
        real = realization(el, eps, config)
        reals.append(("bottom", real))
        x, _ = real.mask.centers(real.cells) if real.cells.size else (np.zeros(1), None)
        checks["bottom_x_extent"] = float(x.max() - x.min()) >= 1.5
    elif suite == "fan":
        checks["pairwise_distinct"] = all(v == DISTINCT for v in ev)
        checks["impressions_contain_origin"] = all(r.contains_point(Point(0.0, 0.0)) for _, r in reals)
    groups = tuple(tuple(g) for g in seqs["groups"])
    return SuiteResult(suite, config, tol, eps, tuple(pairs), tuple(profiles), tuple(reals), collapse, checks,
                       groups)


def sequence_to_dict(seq: BoundarySequence) -> dict:
    return {"tag": seq.tag, "depths": list(seq.depths), "points": [list(p) for p in seq.points]}


def sequence_from_dict(d: dict) -> BoundarySequence:
    return BoundarySequence(tuple(Point(*p) for p in d["points"]), d["tag"], tuple(d["depths"]))
