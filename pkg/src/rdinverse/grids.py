"""Uniform space/time grids and the field containers defined on them.

Fields are stored time-major: ``values[n, i]`` is the value at time node
``n`` and space node ``i``, so one PDE sweep walks each time slice
contiguously.  All quadrature is composite trapezoid (half weight at the
endpoints), which is what makes the discrete adjoint identities in the
iteration modules exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError


@dataclass(frozen=True)
class SpaceGrid:
    """Equidistant nodes on [x_min, x_max], boundary nodes included.

    Parameters
    ----------
    n_x : int
        Node count including both boundary nodes; at least 3.
    x_min, x_max : float
        Interval endpoints.
    """

    n_x: int
    x_min: float = 0.0
    x_max: float = 1.0

    def __post_init__(self):
        if self.n_x < 3:
            raise StructuralError(f"n_x must be >= 3, got {self.n_x}")
        if not self.x_max > self.x_min:
            raise StructuralError("x_max must exceed x_min")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (h, halved at the two endpoints)."""
        w = np.full(self.n_x, self.h)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant time nodes on [0, t_final].

    Parameters
    ----------
    n_t : int
        Node count; at least 2 (initial and final time).
    t_final : float
        Final time T > 0.
    """

    n_t: int
    t_final: float = 0.1

    def __post_init__(self):
        if self.n_t < 2:
            raise StructuralError(f"n_t must be >= 2, got {self.n_t}")
        if not self.t_final > 0:
            raise StructuralError("t_final must be positive")

    @property
    def dt(self) -> float:
        return self.t_final / (self.n_t - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_t)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (dt, halved at t=0 and t=T)."""
        w = np.full(self.n_t, self.dt)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


@dataclass(frozen=True)
class SpatialField:
    """A scalar function of x sampled on a SpaceGrid."""

    values: np.ndarray
    grid: SpaceGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_x,):
            raise StructuralError(
                f"spatial field shape {v.shape} does not match grid ({self.grid.n_x},)"
            )
        if not np.all(np.isfinite(v)):
            raise StructuralError("spatial field contains non-finite entries")

    def with_values(self, values: np.ndarray) -> "SpatialField":
        return SpatialField(values, self.grid)


@dataclass(frozen=True)
class SpaceTimeField:
    """A scalar function of (t, x) sampled on a TimeGrid x SpaceGrid tensor grid."""

    values: np.ndarray
    space: SpaceGrid
    time: TimeGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.time.n_t, self.space.n_x):
            raise StructuralError(
                f"space-time field shape {v.shape} does not match grids "
                f"({self.time.n_t}, {self.space.n_x})"
            )
        if not np.all(np.isfinite(v)):
            raise StructuralError("space-time field contains non-finite entries")

    def with_values(self, values: np.ndarray) -> "SpaceTimeField":
        return SpaceTimeField(values, self.space, self.time)

    def time_slice(self, n: int) -> SpatialField:
        return SpatialField(self.values[n].copy(), self.space)


def zeros_spacetime(space: SpaceGrid, time: TimeGrid) -> SpaceTimeField:
    return SpaceTimeField(np.zeros((time.n_t, space.n_x)), space, time)


def zeros_spatial(space: SpaceGrid) -> SpatialField:
    return SpatialField(np.zeros(space.n_x), space)


def trapezoid_time_integral(f: SpaceTimeField) -> SpatialField:
    """Integrate a space-time field over time by the composite trapezoid rule.

    Parameters
    ----------
    f : SpaceTimeField

    Returns
    -------
    SpatialField
        The function x -> integral_0^T f(t, x) dt.
    """
    w = f.time.weights
    return SpatialField(w @ f.values, f.space)


def norm_l2_space(g: SpatialField) -> float:
    """Trapezoid-weighted discrete L2 norm over the spatial interval."""
    return float(np.sqrt(np.dot(g.grid.weights, g.values**2)))


def norm_l2_spacetime(f: SpaceTimeField) -> float:
    """Trapezoid-weighted discrete L2 norm over the space-time cylinder."""
    wt = f.time.weights
    wx = f.space.weights
    return float(np.sqrt(wt @ (f.values**2) @ wx))


def inner_l2_space(g1: SpatialField, g2: SpatialField) -> float:
    if g1.grid != g2.grid:
        raise StructuralError("spatial inner product needs matching grids")
    return float(np.dot(g1.grid.weights, g1.values * g2.values))


def inner_l2_spacetime(f1: SpaceTimeField, f2: SpaceTimeField) -> float:
    if f1.space != f2.space or f1.time != f2.time:
        raise StructuralError("space-time inner product needs matching grids")
    return float(f1.time.weights @ (f1.values * f2.values) @ f1.space.weights)
