"""Conformal capacity of condensers and of cell sets.

A condenser ``(F0, F1; Omega)`` is discretized by rasterizing both plates,
fixing the potential to 0 on F0 and 1 on F1, and solving the discrete Laplace
equation with reflecting conditions elsewhere.  The capacity is the discrete
Dirichlet energy of that potential.
"""

from __future__ import annotations

import math
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from . import solver
from .errors import PreconditionError
from .geometry import (
    AnnulusRegion, BoxRegion, DiskRegion, DomainSpec, Disk, GridMask, PlateSpec, Point,
    Segment, Shape, build_mask, rasterize_plate,
)


@dataclass(frozen=True)
class Condenser:
    domain: DomainSpec
    plate0: PlateSpec
    plate1: PlateSpec

    def swapped(self) -> "Condenser":
        return Condenser(self.domain, self.plate1, self.plate0)

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "plate0": self.plate0.to_dict(),
                "plate1": self.plate1.to_dict()}


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Extremal potential: 0 on ``plate0`` cells, 1 on ``plate1`` cells, NaN off the node set."""

    values: np.ndarray
    h: float
    mask: GridMask
    plate0: np.ndarray
    plate1: np.ndarray
    nodes: np.ndarray

    @property
    def energy(self) -> float:
        return solver.dirichlet_energy(self.values, self.nodes)

    def at(self, p) -> float:
        c = self.mask.cell_of([p])[0]
        return float(self.values.flat[c]) if c >= 0 else math.nan


@dataclass(frozen=True)
class CapacityEstimate:
    """``value`` is the finest-grid energy, or its two-grid extrapolation when ``extrapolated``.

    ``error_indicator`` is ``|E(h_fine) - E(2 h_fine)|``; it is 0 for a single grid.
    """

    value: float
    resolutions_used: tuple[float, ...]
    extrapolated: bool
    error_indicator: float
    raw_values: tuple[float, ...] = ()
    iterations: int = 0
    wall_time: float = 0.0


def richardson(coarse: float, fine: float, order: int = 1) -> float:
    """Two-grid extrapolation for a ratio-2 refinement with error ~ h**order."""
    f = 2.0 ** order
    return (f * fine - coarse) / (f - 1.0)


def _plate_cells(mask: GridMask, plate0: PlateSpec, plate1: PlateSpec) -> tuple[np.ndarray, np.ndarray]:
    c0 = rasterize_plate(plate0, mask)
    c1 = rasterize_plate(plate1, mask)
    if np.intersect1d(c0, c1, assume_unique=True).size:
        raise PreconditionError(f"plates overlap on the grid at h={mask.h:.6g}")
    return c0, c1


def _canonical(c0: np.ndarray, c1: np.ndarray) -> bool:
    """True when the (c0, c1) order should be swapped for the canonical solve."""
    a, b = c0.tolist(), c1.tolist()
    return (len(a), a) > (len(b), b)


def solve_cells(mask: GridMask, c0: np.ndarray, c1: np.ndarray, tol: float = solver.DEFAULT_TOL,
                method: str = "pcg") -> tuple[float, np.ndarray, np.ndarray, solver.SolveReport]:
    """Energy and potential for cell-set plates (0 on ``c0``, 1 on ``c1``).

    The solve is always performed in a canonical plate order so the returned
    energy is bit-identical when the plates are exchanged.
    """
    swap = _canonical(c0, c1)
    a, b = (c1, c0) if swap else (c0, c1)
    system = solver.assemble(mask, [(a, 0.0), (b, 1.0)])
    field, report = solver.solve(system, tol, method=method)
    energy = system.energy(field)
    if swap:
        field = 1.0 - field
    return energy, field, system.nodes, report


def condenser_capacity(c: Condenser, h: float, refine: int = 0, *, tol: float = solver.DEFAULT_TOL,
                       method: str = "pcg") -> tuple[CapacityEstimate, PotentialField]:
    """Capacity of ``c`` at ``h``; with ``refine >= 1`` the two finest grids are extrapolated."""
    if refine < 0:
        raise ValueError("refine must be >= 0")
    t0 = time.perf_counter()
    hs = tuple(h / 2 ** k for k in range(refine + 1))
    energies, its = [], 0
    field = None
    for k, hk in enumerate(hs):
        if k < refine - 1:
            continue  # only the two finest grids enter the estimate
        mask = build_mask(c.domain, hk)
        c0, c1 = _plate_cells(mask, c.plate0, c.plate1)
        e, values, nodes, rep = solve_cells(mask, c0, c1, tol, method)
        energies.append(e)
        its += rep.iterations
        field = PotentialField(values, hk, mask, c0, c1, nodes)
    used = hs[-2:] if refine >= 1 else hs
    if refine >= 1:
        value = richardson(energies[-2], energies[-1])
        err = abs(energies[-1] - energies[-2])
    else:
        value, err = energies[-1], 0.0
    est = CapacityEstimate(max(value, 0.0), used, refine >= 1, err, tuple(energies), its,
                           time.perf_counter() - t0)
    return est, field


def set_capacity(E: PlateSpec | Shape | Sequence[Shape], domain: DomainSpec, h: float, refine: int = 0,
                 **kw) -> CapacityEstimate:
    """Capacity of the condenser (boundary, E; domain)."""
    return condenser_capacity(Condenser(domain, PlateSpec.boundary(), _as_plate(E)), h, refine, **kw)[0]


def _as_plate(E) -> PlateSpec:
    if isinstance(E, PlateSpec):
        return E
    if isinstance(E, Shape):
        return PlateSpec.of(E)
    return PlateSpec(tuple(E))


def cell_set_capacity(mask: GridMask, cells0: np.ndarray | str, cells1: np.ndarray,
                      tol: float = solver.DEFAULT_TOL, method: str = "pcg") -> float:
    """Capacity between two cell sets; ``cells0 == "boundary"`` grounds all boundary cells."""
    c0 = mask.boundary_flat if isinstance(cells0, str) and cells0 == "boundary" else np.asarray(cells0)
    c1 = np.unique(np.asarray(cells1, dtype=np.int64))
    if c1.size == 0:
        return 0.0
    if np.intersect1d(c0, c1).size:
        return math.inf
    return solve_cells(mask, np.unique(c0), c1, tol, method)[0]


class CellCapacity:
    """Fast repeated capacities ``cp(ground, A)`` for many small interior cell sets ``A``.

    With ``G`` the inverse of the Laplacian grounded on ``ground`` (reflecting
    elsewhere), the capacity of ``A`` is ``1' inv(G[A, A]) 1``: the Schur
    complement of the Laplacian onto ``A`` is the inverse of ``G[A, A]``.
    Columns of ``G`` come from one sparse LU factorization and are cached
    (least-recently-used, bounded in bytes).  Each column is computed by its
    own triangular solve, so results never depend on the cache history.
    """

    def __init__(self, mask: GridMask, ground: np.ndarray | str, cache_bytes: int = 512 * 2 ** 20):
        self.mask = mask
        g = mask.boundary_flat if isinstance(ground, str) and ground == "boundary" else np.asarray(ground)
        self.ground = np.unique(g.astype(np.int64))
        system = solver.assemble(mask, [(self.ground, 0.0)])
        self.free = system.free
        self.index = np.full(mask.size, -1, dtype=np.int64)
        self.index[self.free] = np.arange(self.free.size)
        self._lu = spla.splu(system.A.tocsc())
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._max_cols = max(64, cache_bytes // max(1, 8 * self.free.size))

    def column(self, k: int) -> np.ndarray:
        col = self._cache.get(k)
        if col is not None:
            self._cache.move_to_end(k)
            return col
        e = np.zeros(self.free.size)
        e[k] = 1.0
        col = self._lu.solve(e)
        self._cache[k] = col
        if len(self._cache) > self._max_cols:
            self._cache.popitem(last=False)
        return col

    def __call__(self, cells: np.ndarray, direct_above: int | None = None) -> float:
        """Capacity of ``cells``; sets larger than ``direct_above`` use one direct solve instead.

        The choice depends only on the set size, never on the cache state.
        """
        cells = np.unique(np.asarray(cells, dtype=np.int64))
        if cells.size == 0:
            return 0.0
        idx = self.index[cells]
        if (idx < 0).any():
            # meets the grounded set (or leaves the free region): no admissible function
            return math.inf
        if direct_above is not None and cells.size > direct_above:
            system = solver.assemble(self.mask, [(self.ground, 0.0), (cells, 1.0)])
            full, _ = solver.solve(system, method="direct")
            return system.energy(np.nan_to_num(full))
        G = np.empty((idx.size, idx.size))
        for j, k in enumerate(idx):
            G[:, j] = self.column(int(k))[idx]
        G = 0.5 * (G + G.T)
        try:
            cf = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
            y = scipy.linalg.cho_solve(cf, np.ones(idx.size), check_finite=False)
        except np.linalg.LinAlgError:
            y = scipy.linalg.solve(G, np.ones(idx.size), assume_a="sym")
        return float(np.sum(y))


# ---------------------------------------------------------------------------
# Shipped condenser families and checks
# ---------------------------------------------------------------------------


def annulus_condenser(r: float = 0.25, ratio: float = math.e) -> Condenser:
    """Ring condenser with radii ``r`` and ``R = ratio * r``; capacity 2*pi/ln(ratio)."""
    R = ratio * r
    return Condenser(Disk(Point(0.0, 0.0), 1.2 * R),
                     PlateSpec.of(AnnulusRegion(Point(0.0, 0.0), R, 1.2 * R)),
                     PlateSpec.of(DiskRegion(Point(0.0, 0.0), r)))


def concentric_disk_capacity(eps: float) -> float:
    """Exact capacity of (unit circle, closed disk radius eps)."""
    return 2 * math.pi / math.log(1.0 / eps)


@dataclass(frozen=True)
class AsymptoticRow:
    eps: float
    capacity: float
    ratio: float
    error_indicator: float


def asymptotic_lower_suite(eps_list: Iterable[float], h: float = 1 / 128, refine: int = 1
                           ) -> list[AsymptoticRow]:
    """Rows ``(eps, cp, cp / ln(1 + eps))`` for F0 = [-1, -1/2], F1 = [0, eps] in disk(0, 3)."""
    rows = []
    dom = Disk(Point(0.0, 0.0), 3.0)
    f0 = PlateSpec.of(Segment(Point(-1.0, 0.0), Point(-0.5, 0.0)))
    for eps in eps_list:
        if not 0 < eps < 0.25:
            raise ValueError("eps must lie in (0, 1/4)")
        f1 = PlateSpec.of(Segment(Point(0.0, 0.0), Point(eps, 0.0)))
        est, _ = condenser_capacity(Condenser(dom, f0, f1), h, refine)
        rows.append(AsymptoticRow(eps, est.value, est.value / math.log1p(eps), est.error_indicator))
    return rows


def asymptotic_upper_suite(eps_list: Iterable[float], h: float = 1 / 128, refine: int = 1
                           ) -> list[AsymptoticRow]:
    """Rows ``(eps, cp, cp * ln(1/eps))`` for the condenser (unit circle, [0, eps]; unit disk)."""
    rows = []
    dom = Disk(Point(0.0, 0.0), 1.0)
    for eps in eps_list:
        est = set_capacity(PlateSpec.of(Segment(Point(0.0, 0.0), Point(eps, 0.0))), dom, h, refine)
        rows.append(AsymptoticRow(eps, est.value, est.value * math.log(1.0 / eps), est.error_indicator))
    return rows


def spread(values: Iterable[float]) -> float:
    v = np.asarray(list(values), dtype=float)
    return float(v.max() / v.min())


@dataclass(frozen=True)
class ComparabilityReport:
    K: float
    ratios: tuple[float, ...]
    capacities: tuple[tuple[float, float], ...]


def comparability_check(F01: PlateSpec, F02: PlateSpec, F1: PlateSpec | Sequence[PlateSpec],
                        domain: DomainSpec, h: float, refine: int = 0) -> ComparabilityReport:
    """Empirical constant ``K = max max(cp(F01,F1)/cp(F02,F1), inverse)`` over the F1 samples."""
    samples = [F1] if isinstance(F1, PlateSpec) else list(F1)
    mask = build_mask(domain, h / 2 ** refine)
    a = rasterize_plate(F01, mask)
    b = rasterize_plate(F02, mask)
    for s in samples:
        c = rasterize_plate(s, mask)
        if np.intersect1d(a, c).size or np.intersect1d(b, c).size:
            raise PreconditionError("comparability plates must be mutually disjoint")
    ratios, caps = [], []
    for s in samples:
        c1 = condenser_capacity(Condenser(domain, F01, s), h, refine)[0].value
        c2 = c1 if F02 == F01 else condenser_capacity(Condenser(domain, F02, s), h, refine)[0].value
        caps.append((c1, c2))
        ratios.append(max(c1 / c2, c2 / c1))
    return ComparabilityReport(max(ratios), tuple(ratios), tuple(caps))
