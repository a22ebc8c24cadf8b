"""Discrete mixed Dirichlet/Neumann Laplace problems on grid masks.

The unknowns live on cell centres.  Nodes are the interior cells plus any
constrained cells (which may be boundary cells); the 5-point stencil couples
4-adjacent nodes only, so an edge leading to a non-node cell is simply absent.
That is the mirror-ghost-cell Neumann condition: the ghost copies the node
value and the corresponding flux term vanishes.

The discrete Dirichlet energy of a nodal field ``u`` is ``sum((u_p - u_q)**2)``
over node edges.  In two dimensions the ``h**2`` cell area cancels against the
``1/h**2`` of the squared difference quotient, so no scaling appears.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, PreconditionError, SingularSystem, TooLarge
from .geometry import GridMask

DEFAULT_TOL = 1e-8
DENSE_CAP = 4096


def _edges(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat index pairs of 4-adjacent node cells (each edge once)."""
    nx, ny = nodes.shape
    flat = np.arange(nx * ny, dtype=np.int64).reshape(nx, ny)
    hor = nodes[:-1, :] & nodes[1:, :]
    ver = nodes[:, :-1] & nodes[:, 1:]
    p = np.concatenate([flat[:-1, :][hor], flat[:, :-1][ver]])
    q = np.concatenate([flat[1:, :][hor], flat[:, 1:][ver]])
    return p, q


def dirichlet_energy(values: np.ndarray, nodes: np.ndarray) -> float:
    """Sum of squared differences over 4-adjacent node pairs of a full-grid field."""
    p, q = _edges(nodes)
    v = values.ravel()
    d = v[p] - v[q]
    return float(np.dot(d, d))


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Grounded 5-point Laplacian on the free cells of a mask.

    ``A x = b`` with ``x`` the free-cell values; ``b`` collects the fixed
    neighbours' values.
    """

    mask: GridMask
    nodes: np.ndarray  # bool (nx, ny): free or fixed
    fixed: np.ndarray  # flat indices, sorted
    fixed_values: np.ndarray
    free: np.ndarray  # flat indices, sorted
    A: sp.csr_matrix
    b: np.ndarray

    @property
    def n_free(self) -> int:
        return int(self.free.size)

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Full-grid field from free values (NaN off the node set)."""
        out = np.full(self.mask.size, np.nan)
        out[self.fixed] = self.fixed_values
        out[self.free] = x
        return out.reshape(self.mask.shape)

    def energy(self, full: np.ndarray) -> float:
        return dirichlet_energy(full, self.nodes)

    def residual(self, x: np.ndarray) -> float:
        bn = np.linalg.norm(self.b)
        r = np.linalg.norm(self.b - self.A @ x)
        return float(r / bn) if bn > 0 else float(r)


def assemble(mask: GridMask, constraints: Sequence[tuple[np.ndarray, float]]) -> LinearSystem:
    """Build the system for Dirichlet data ``[(cells, value), ...]`` on ``mask``.

    Constrained cells must be interior or boundary cells; constraint sets must be
    disjoint. Free cells are the remaining interior cells.
    """
    fixed_parts, value_parts = [], []
    seen = np.zeros(mask.size, dtype=bool)
    for cells, value in constraints:
        cells = np.unique(np.asarray(cells, dtype=np.int64))
        if seen[cells].any():
            raise PreconditionError("constraint sets overlap")
        if not (mask.interior.flat[cells] | mask.boundary.flat[cells]).all():
            raise PreconditionError("constraint cells must be interior or boundary cells")
        seen[cells] = True
        fixed_parts.append(cells)
        value_parts.append(np.full(cells.size, float(value)))
    fixed = np.concatenate(fixed_parts) if fixed_parts else np.zeros(0, dtype=np.int64)
    fixed_values = np.concatenate(value_parts) if value_parts else np.zeros(0)
    order = np.argsort(fixed, kind="stable")
    fixed, fixed_values = fixed[order], fixed_values[order]

    free_mask = mask.interior.ravel() & ~seen
    nodes = (free_mask | seen).reshape(mask.shape)
    free = np.flatnonzero(free_mask)
    index = np.full(mask.size, -1, dtype=np.int64)
    index[free] = np.arange(free.size)
    value_of = np.zeros(mask.size)
    value_of[fixed] = fixed_values

    p, q = _edges(nodes)
    ip, iq = index[p], index[q]
    n = free.size
    deg = np.bincount(ip[ip >= 0], minlength=n) + np.bincount(iq[iq >= 0], minlength=n)
    both = (ip >= 0) & (iq >= 0)
    rows = np.concatenate([np.arange(n), ip[both], iq[both]])
    cols = np.concatenate([np.arange(n), iq[both], ip[both]])
    vals = np.concatenate([deg.astype(float), -np.ones(2 * both.sum())])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    A.sort_indices()
    b = np.zeros(n)
    pf = (ip >= 0) & (iq < 0)
    qf = (iq >= 0) & (ip < 0)
    np.add.at(b, ip[pf], value_of[q[pf]])
    np.add.at(b, iq[qf], value_of[p[qf]])
    return LinearSystem(mask, nodes, fixed, fixed_values, free, A, b)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    method: str = "pcg"


def _pcg(A: sp.csr_matrix, b: np.ndarray, x0: np.ndarray, tol: float, maxiter: int
         ) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned conjugate gradients on the true relative residual."""
    dinv = 1.0 / A.diagonal()
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    x = x0.copy()
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    if rnorm <= target:
        return x, 0, rnorm / bnorm
    best_x, best_r = x.copy(), rnorm
    z = dinv * r
    p = z.copy()
    rz = float(np.dot(r, z))
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / float(np.dot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm < best_r:
            best_r = rnorm
            best_x = x.copy()
        if rnorm <= target:
            # guard against drift of the recursively updated residual
            true_r = np.linalg.norm(b - A @ x)
            if true_r <= target:
                return x, it, true_r / bnorm
            r = b - A @ x
        z = dinv * r
        rz_new = float(np.dot(r, z))
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise NoConvergence(maxiter, best=best_x, residual=best_r / bnorm)


def solve(system: LinearSystem, tol: float = DEFAULT_TOL, *, max_iterations: int | None = None,
          x0: np.ndarray | None = None, method: str = "pcg") -> tuple[np.ndarray, SolveReport]:
    """Solve the system; return the full-grid field (NaN off nodes) and a report.

    ``method`` is ``"pcg"`` (default) or ``"direct"`` (sparse LU).  The result
    is clipped to the constraint range, which only removes round-off overshoot.
    On non-convergence :class:`NoConvergence` carries the best full-grid iterate.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if system.fixed.size == 0:
        raise SingularSystem("no Dirichlet constraints: pure Neumann Laplacian is singular")
    t0 = time.perf_counter()
    lo, hi = float(system.fixed_values.min()), float(system.fixed_values.max())
    n = system.n_free
    if n == 0:
        return system.expand(np.zeros(0)), SolveReport(0, 0.0, time.perf_counter() - t0, method)
    if np.linalg.norm(system.b) == 0.0:
        # all neighbouring constraints vanish: the solution is identically zero
        x = np.zeros(n)
        return system.expand(x), SolveReport(0, 0.0, time.perf_counter() - t0, method)
    if method == "direct":
        x = spla.splu(system.A.tocsc()).solve(system.b)
        its = 0
        res = system.residual(x)
    elif method == "pcg":
        if x0 is None:
            x0 = np.full(n, lo) if lo == hi else np.zeros(n)
        if max_iterations is None:
            max_iterations = 1000 + 50 * int(math.sqrt(n)) * 4
        try:
            x, its, res = _pcg(system.A, system.b, np.asarray(x0, dtype=float), tol, max_iterations)
        except NoConvergence as exc:
            exc.best = system.expand(np.clip(exc.best, lo, hi))
            raise
    else:
        raise ValueError(f"unknown method {method!r}")
    np.clip(x, lo, hi, out=x)
    return system.expand(x), SolveReport(its, res, time.perf_counter() - t0, method)


def dense_oracle(system: LinearSystem) -> np.ndarray:
    """Dense direct solution of the same system (test oracle, at most 4096 free cells)."""
    if system.n_free > DENSE_CAP:
        raise TooLarge(f"{system.n_free} free cells exceed the dense cap of {DENSE_CAP}")
    if system.fixed.size == 0:
        raise SingularSystem("no Dirichlet constraints: pure Neumann Laplacian is singular")
    if system.n_free == 0:
        return system.expand(np.zeros(0))
    x = scipy.linalg.solve(system.A.toarray(), system.b, assume_a="pos")
    return system.expand(x)
