"""Numerical conformal capacities, capacitary metrics and boundary traces on plane grids."""

__version__ = "0.1.0"
