"""Exception hierarchy shared by all capbound modules."""

from __future__ import annotations

from typing import Any


class CapboundError(Exception):
    """Base class. ``module`` names the subsystem that raised it."""

    module = "capbound"

    @property
    def name(self) -> str:
        return type(self).__name__


class GeometryError(CapboundError):
    module = "geometry"


class UnresolvedFeature(GeometryError):
    """A channel, slit or plate is thinner than three cells at the requested h."""


class EmptyPlate(GeometryError):
    """No grid cell intersects the plate geometry."""


class CurveEscapesDomain(GeometryError):
    """A curve's covering cells leave the interior of the mask."""


class PreconditionError(CapboundError):
    """Inputs violate a documented precondition (overlapping plates, containment, ...)."""


class SolverError(CapboundError):
    module = "solver"


class NoConvergence(SolverError):
    def __init__(self, max_iterations: int, best: Any = None, residual: float = float("nan")):
        super().__init__(
            f"PCG did not converge in {max_iterations} iterations (residual {residual:.3e})"
        )
        self.max_iterations = max_iterations
        self.best = best
        self.residual = residual


class TooLarge(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class UnreachablePair(CapboundError):
    module = "capmetric"


class InfiniteEnergy(CapboundError):
    module = "sobolev_trace"


class BudgetExceeded(CapboundError):
    """No exceptional set fits in the capacity budget. The report is attached."""

    module = "sobolev_trace"

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class OutsideSource(CapboundError):
    module = "maps"


class SelfIntersecting(CapboundError):
    module = "maps"


class SceneError(CapboundError):
    """Scene file failed validation. ``path`` is the JSON path of the offending field."""

    module = "cli"

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path
