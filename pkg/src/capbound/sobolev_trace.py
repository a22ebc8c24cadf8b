"""Finite-energy grid functions, Luzin exceptional sets and boundary traces.

A quasicontinuous representative is never built pointwise.  Instead a function
comes with exceptional cell sets ``U`` (indexed by a capacity budget) off which
it is uniformly continuous, and with trace estimates along the sequences that
represent boundary elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import boundary as bd
from .capacity import cell_set_capacity
from .capmetric import MetricConfig, level_for
from .errors import BudgetExceeded, GeometryError, InfiniteEnergy, PreconditionError
from .geometry import Disk, DomainSpec, GridMask, Point, as_point, build_mask
from .solver import dirichlet_energy

CONSISTENT, INCONSISTENT = "CONSISTENT", "INCONSISTENT"
EUCLIDEAN, CAPACITARY = "euclidean", "capacitary"
TRACE_TOL = 5e-2


# ---------------------------------------------------------------------------
# Grid functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on the interior cells of a mask (NaN elsewhere)."""

    values: np.ndarray
    mask: GridMask
    tag: str = "custom"
    energy: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.mask.shape:
            raise ValueError("values must have the mask's shape")
        v[~self.mask.interior] = np.nan
        if not np.isfinite(v[self.mask.interior]).all():
            raise InfiniteEnergy(f"{self.tag}: non-finite values on interior cells")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "energy", dirichlet_energy(np.nan_to_num(v), self.mask.interior))

    @property
    def h(self) -> float:
        return self.mask.h

    @property
    def domain(self) -> DomainSpec | None:
        return self.mask.domain

    def at(self, p) -> float:
        """Value of the cell containing ``p``."""
        c = int(self.mask.cell_of([as_point(p)])[0])
        if c < 0 or not self.mask.interior.flat[c]:
            raise PreconditionError(f"point {tuple(as_point(p))} is not in an interior cell at h={self.h:.6g}")
        return float(self.values.flat[c])

    def scaled(self, alpha: float) -> "GridFunction":
        return GridFunction(alpha * self.values, self.mask, f"{alpha:g}*{self.tag}")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        if other.mask is not self.mask:
            raise ValueError("grid functions live on different masks")
        return GridFunction(self.values + other.values, self.mask, f"{self.tag}+{other.tag}")

    @property
    def rms_gradient(self) -> float:
        """``sqrt(energy / area)``; the natural slope scale of the function."""
        area = self.mask.interior.sum() * self.h ** 2
        return math.sqrt(self.energy / area) if area > 0 else 0.0


def _default_singular_point(domain: DomainSpec) -> complex:
    if isinstance(domain, Disk):
        return complex(domain.center.x + domain.radius, domain.center.y)
    raise PreconditionError("a singular boundary point z0 is required for this domain")


def _formula(tag: str, domain: DomainSpec, z0) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if tag == "constant":
        return lambda x, y: np.ones_like(x)
    if tag in ("coordinate_x", "harmonic_re_z"):
        # Re z is the coordinate x; both tags are kept for readability of scenes
        return lambda x, y: np.array(x, dtype=float)
    if tag in ("sqrt_singularity", "radial_log"):
        z0 = _default_singular_point(domain) if z0 is None else complex(*as_point(z0))
        if tag == "sqrt_singularity":
            return lambda x, y: np.sqrt(z0 - (x + 1j * y)).real
        return lambda x, y: np.log(np.abs((x + 1j * y) - z0))
    raise ValueError(f"unknown function tag {tag!r}; expected one of {sorted(CATALOG)}")


CATALOG = ("constant", "coordinate_x", "harmonic_re_z", "sqrt_singularity", "radial_log")


def sample(domain: DomainSpec, tag: str, h: float, z0=None) -> GridFunction:
    """Sample a catalog formula on the interior cells at ``h`` (no energy check)."""
    mask = build_mask(domain, h)
    f = _formula(tag, domain, z0)
    X, Y = mask.centers()
    with np.errstate(all="ignore"):
        v = np.where(mask.interior, f(X, Y), np.nan)
    return GridFunction(v, mask, tag)


def energy_trend(domain: DomainSpec, tag: str, h: float, z0=None, levels: int = 3) -> list[tuple[float, float]]:
    """``(h_k, energy)`` on the grids ``2^(levels-1) h, ..., 2h, h`` that resolve the domain."""
    out = []
    for k in range(levels - 1, -1, -1):
        hk = h * 2 ** k
        try:
            out.append((hk, sample(domain, tag, hk, z0).energy))
        except GeometryError:
            continue
    return out


def make_function(domain: DomainSpec, tag: str, h: float, z0=None, check: bool = True) -> GridFunction:
    """Sample a catalog function and verify that its discrete energy stays bounded.

    Energies on ``4h, 2h, h`` must not grow by more than 1.5x per halving, and
    the increments must shrink (a logarithmically divergent energy grows by
    near-constant increments, which the ratio test alone would miss).
    """
    u = sample(domain, tag, h, z0)
    if not check or u.energy == 0.0:
        return u
    trend = [e for _, e in energy_trend(domain, tag, h, z0)]
    if not all(math.isfinite(e) for e in trend):
        raise InfiniteEnergy(f"{tag}: non-finite discrete energy")
    for a, b in zip(trend, trend[1:]):
        if a > 0 and b / a > 1.5:
            raise InfiniteEnergy(f"{tag}: energy ratio {b / a:.3g} > 1.5 under refinement")
    if len(trend) >= 3:
        d1, d2 = trend[-2] - trend[-3], trend[-1] - trend[-2]
        if d2 > 0.05 * trend[-1] and d2 >= 0.75 * d1:
            raise InfiniteEnergy(f"{tag}: energy increments {d1:.4g}, {d2:.4g} do not decay under refinement")
    return u


# ---------------------------------------------------------------------------
# Luzin exceptional sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LuzinReport:
    epsilon: float
    U_cells: np.ndarray
    cap_U: float
    modulus: tuple[tuple[float, float], ...]  # (radius, max |u(a) - u(b)|) off U
    metric_kind: str
    error_indicator: float = 0.0
    threshold: float = 0.0
    h: float = 0.0

    @property
    def empty(self) -> bool:
        return self.U_cells.size == 0


_OFFSETS = [(di, dj) for di in range(-2, 3) for dj in range(-2, 3) if (di, dj) > (0, 0)]


def _pair_slopes(u: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Per-cell max slope (per cell step) over alive neighbours within 2 cells."""
    slope = np.zeros(u.shape)
    nx, ny = u.shape
    for di, dj in _OFFSETS:
        a = (slice(max(0, -di), nx - max(0, di)), slice(max(0, -dj), ny - max(0, dj)))
        b = (slice(max(0, di), nx - max(0, -di)), slice(max(0, dj), ny - max(0, -dj)))
        ok = alive[a] & alive[b]
        s = np.where(ok, np.abs(u[a] - u[b]) / math.hypot(di, dj), 0.0)
        np.maximum(slope[a], s, out=slope[a])
        np.maximum(slope[b], s, out=slope[b])
    return slope


def _euclidean_modulus(u: np.ndarray, alive: np.ndarray, h: float, radii_cells=(1, 2)) -> tuple:
    out = []
    for r in radii_cells:
        best = 0.0
        for di, dj in _OFFSETS:
            if math.hypot(di, dj) > r + 1e-9:
                continue
            nx, ny = u.shape
            a = (slice(max(0, -di), nx - max(0, di)), slice(max(0, -dj), ny - max(0, dj)))
            b = (slice(max(0, di), nx - max(0, -di)), slice(max(0, dj), ny - max(0, -dj)))
            ok = alive[a] & alive[b]
            if ok.any():
                best = max(best, float(np.abs(u[a] - u[b])[ok].max()))
        out.append((r * h, best))
    return tuple(out)


def _coarse_cells(cells: np.ndarray, fine: GridMask, coarse: GridMask) -> np.ndarray:
    x, y = fine.centers(cells)
    c = coarse.cell_of(np.column_stack([x, y]))
    c = np.unique(c[c >= 0])
    return c[coarse.interior.flat[c]]


def weak_luzin(u: GridFunction, eps: float, slope_factor: float = 4.0, tol: float = 1e-8) -> LuzinReport:
    """Exceptional set for the Euclidean modulus of continuity.

    Cells are removed greedily, steepest first, until every remaining pair of
    cells within two cells of each other has slope at most
    ``slope_factor * rms_gradient``.  The capacity of the removed set is the
    grounded set capacity ``cp(boundary, U)``; its error indicator is the
    change when ``U`` is re-rasterized at ``2h``.

    Raises :class:`BudgetExceeded` (carrying the report) if ``cap_U > eps``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    mask = u.mask
    vals = np.nan_to_num(u.values)
    alive = mask.interior.copy()
    L = slope_factor * u.rms_gradient * mask.h  # per-cell-step threshold
    removed = []
    while True:
        slope = _pair_slopes(vals, alive)
        slope[~alive] = 0.0
        worst = float(slope.max()) if alive.any() else 0.0
        if worst <= L * (1 + 1e-12):
            break
        # remove every cell within 1% of the current worst slope (ties are common on grids)
        batch = np.flatnonzero((slope >= 0.99 * worst).ravel() & alive.ravel())
        alive.flat[batch] = False
        removed.append(batch)
    U = np.unique(np.concatenate(removed)) if removed else np.zeros(0, dtype=np.int64)
    if U.size:
        cap = cell_set_capacity(mask, "boundary", U, tol=tol)
        err = 0.0
        try:
            coarse = build_mask(mask.domain, 2 * mask.h)
            Uc = _coarse_cells(U, mask, coarse)
            if Uc.size:
                err = abs(cap - cell_set_capacity(coarse, "boundary", Uc, tol=tol))
        except GeometryError:
            pass
    else:
        cap, err = 0.0, 0.0
    rep = LuzinReport(float(eps), U, float(cap), _euclidean_modulus(vals, alive, mask.h), EUCLIDEAN,
                      float(err), float(L / mask.h), mask.h)
    if cap > eps:
        raise BudgetExceeded(f"exceptional set capacity {cap:.4g} exceeds the budget {eps:.4g}", rep)
    return rep


def strong_luzin(u: GridFunction, eps: float, config: MetricConfig, samples: Sequence | None = None,
                 close: float = 2.0, jump: float = 0.25, n_samples: int = 12, tol: float = 1e-8
                 ) -> LuzinReport:
    """Exceptional set for the modulus of continuity with respect to rho.

    Sample points (default: ``n_samples`` deterministic probe cells near the
    boundary) are compared pairwise with the quick rho upper bound of
    :func:`capbound.boundary.quick_distances`.  A pair violates uniform
    continuity when ``rho < close`` but ``|u(a) - u(b)| > jump * osc(u)``.
    Greedily, the point with most violations is excised together with its
    3x3 cell block, until no violation remains.  ``cap_U`` is ``cp(F, U)``
    with the metric's reference continuum ``F``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    lvl = level_for(config)
    mask = lvl.mask
    if samples is None:
        dist, _ = lvl.near_boundary
        cand = np.flatnonzero(mask.interior.ravel() & (dist.ravel() <= 4 * mask.h))
        cand = cand[np.linspace(0, cand.size - 1, min(n_samples, cand.size)).astype(int)]
        pts = [Point(float(a), float(b)) for a, b in zip(*mask.centers(cand))]
    else:
        pts = [as_point(p) for p in samples]
    uv = np.array([u.at(p) for p in pts])
    osc = float(np.nanmax(u.values) - np.nanmin(u.values))
    n = len(pts)
    cells = mask.cell_of(np.asarray(pts))
    D = np.zeros((n, n))
    for i in range(n):
        D[i] = bd.quick_distances(pts[i], cells, config, band=10.0)
    D = np.minimum(D, D.T)
    bad = (D < close) & (np.abs(uv[:, None] - uv[None, :]) > jump * osc)
    np.fill_diagonal(bad, False)
    out = np.zeros(n, dtype=bool)
    while bad[np.ix_(~out, ~out)].any():
        counts = np.where(out, -1, (bad & ~out[None, :]).sum(1))
        out[int(np.argmax(counts))] = True
    U = np.zeros(0, dtype=np.int64)
    if out.any():
        block = np.zeros(mask.shape, dtype=bool)
        block.flat[cells[out]] = True
        block = ndimage.binary_dilation(block, np.ones((3, 3), bool)) & mask.interior
        U = np.setdiff1d(np.flatnonzero(block), lvl.F_cells)
    cap = cell_set_capacity(mask, lvl.F_cells, U, tol=tol) if U.size else 0.0
    keep = ~out
    mod = []
    for r in sorted({close / 2, close, 2 * close}):
        sel = (D <= r) & keep[:, None] & keep[None, :]
        mod.append((r, float(np.abs(uv[:, None] - uv[None, :])[sel].max()) if sel.any() else 0.0))
    rep = LuzinReport(float(eps), U, float(cap), tuple(mod), CAPACITARY, 0.0, float(jump * osc), mask.h)
    if cap > eps:
        raise BudgetExceeded(f"exceptional set capacity {cap:.4g} exceeds the budget {eps:.4g}", rep)
    return rep


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElementTrace:
    tag: str
    values: tuple[float, ...]  # limit estimate per member sequence
    samples: tuple[tuple[float, ...], ...]  # u along each member
    spread: float
    verdict: str
    trapping_capacity: float | None = None

    @property
    def value(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class TraceReport:
    function: str
    tol: float
    elements: tuple[ElementTrace, ...]

    @property
    def all_consistent(self) -> bool:
        return all(e.verdict == CONSISTENT for e in self.elements)


def sequence_limit(u: GridFunction, seq: bd.BoundarySequence, tail: int = 3) -> tuple[float, tuple[float, ...]]:
    """Mean of ``u`` over the last ``tail`` points of the sequence, and all samples."""
    s = tuple(u.at(p) for p in seq.points)
    return float(np.mean(s[-tail:])), s


def trapping_set(config: MetricConfig, p: Point, level: float = 0.5) -> np.ndarray:
    """Cells where the Green function of ``F`` with pole at ``p`` is at least ``level`` of its pole value."""
    lvl = level_for(config)
    k = int(lvl.capF.index[lvl.mask.cell_of([p])[0]])
    if k < 0:
        raise PreconditionError("trapping pole must be a free interior cell")
    g = lvl.capF.column(k)
    sel = g >= level * g[k]
    return lvl.capF.free[sel]


def trapping_capacity(config: MetricConfig, p: Point, level: float = 0.5, tol: float = 1e-8) -> float:
    """``cp(F, U)`` for the Green superlevel set ``U`` around ``p``."""
    lvl = level_for(config)
    return cell_set_capacity(lvl.mask, lvl.F_cells, trapping_set(config, p, level), tol=tol)


def trace(u: GridFunction, elements: Sequence[bd.BoundaryElementEstimate], config: MetricConfig | None = None,
          tol: float = TRACE_TOL, tail: int = 3) -> TraceReport:
    """Trace estimates of ``u`` on boundary elements.

    An element is CONSISTENT when the limits along its member sequences agree
    within ``tol``.  For INCONSISTENT elements (when ``config`` is given) the
    trapping capacity ``cp(F, U)`` of a Green superlevel neighbourhood of the
    deepest point records the size of the set that must be excised.
    """
    rows = []
    for el in elements:
        vals, samples = [], []
        for m in el.members:
            v, s = sequence_limit(u, m, tail)
            vals.append(v)
            samples.append(s)
        spread = float(max(vals) - min(vals))
        verdict = CONSISTENT if spread <= tol else INCONSISTENT
        trap = None
        if verdict == INCONSISTENT and config is not None:
            trap = trapping_capacity(config, bd.resolved(el.members[0], config).deepest)
        tag = "+".join(m.tag for m in el.members)
        rows.append(ElementTrace(tag, tuple(vals), tuple(samples), spread, verdict, trap))
    return TraceReport(u.tag, tol, tuple(rows))
