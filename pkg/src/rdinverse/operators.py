"""Central-difference spatial operators with zero Dirichlet boundaries.

The Laplacian acts on the interior nodes of a :class:`~rdinverse.grids.SpaceGrid`;
boundary values are forced to zero on input and output.  Factorizations are
computed once per grid and reused by every solve, which keeps the many
per-time-slice solves in the iteration modules cheap.

The bi-Laplacian is defined as the square of the discrete Dirichlet
Laplacian, and its inverse is realized as two successive tridiagonal solves.
That way inverting twice with the Laplacian and inverting once with the
bi-Laplacian agree to round-off, a property the duality-weighted inner
products downstream rely on.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import StructuralError
from .grids import SpaceGrid, SpaceTimeField, SpatialField


def _interior_laplacian_matrix(grid: SpaceGrid) -> np.ndarray:
    """Dense tridiagonal matrix of the Dirichlet Laplacian on interior nodes."""
    m = grid.n_x - 2
    h2 = grid.h**2
    mat = np.zeros((m, m))
    idx = np.arange(m)
    mat[idx, idx] = -2.0 / h2
    mat[idx[:-1], idx[:-1] + 1] = 1.0 / h2
    mat[idx[1:], idx[1:] - 1] = 1.0 / h2
    return mat


class DirichletLaplacian:
    """Second-difference Laplacian on a grid, with a cached LU factorization.

    Parameters
    ----------
    grid : SpaceGrid
        The spatial grid; the operator lives on its n_x - 2 interior nodes.
    """

    def __init__(self, grid: SpaceGrid):
        self.grid = grid
        self.factorization = lu_factor(_interior_laplacian_matrix(grid))

    # -- array-level kernels (interior nodes only, rows = time slices) -----

    def apply_full(self, values: np.ndarray) -> np.ndarray:
        """Apply the Laplacian to full-width rows; boundary columns are
        treated as zero and the output boundary columns are zero."""
        v = np.atleast_2d(values)
        out = np.zeros_like(v)
        h2 = self.grid.h**2
        inner = v[:, 1:-1]
        out[:, 1:-1] = -2.0 * inner / h2
        out[:, 2:-1] += v[:, 1:-2] / h2
        out[:, 1:-2] += v[:, 2:-1] / h2
        return out.reshape(np.shape(values))

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        """Solve Lap(z) = rhs on interior nodes; rhs has interior width.

        Accepts a single vector or a stack of rows and solves them in one
        factorized call.
        """
        r = np.atleast_2d(rhs)
        z = lu_solve(self.factorization, r.T).T
        return z.reshape(np.shape(rhs))

    def solve_full(self, rhs: np.ndarray) -> np.ndarray:
        """Solve on full-width rows: interior from the factorization, zero
        boundary columns."""
        r = np.atleast_2d(rhs)
        out = np.zeros_like(r)
        out[:, 1:-1] = self.solve_interior(r[:, 1:-1])
        return out.reshape(np.shape(rhs))


class DirichletBiLaplacian:
    """The square of the discrete Dirichlet Laplacian.

    The factorization handle is the underlying Laplacian's; solving the
    fourth-order system is two successive second-order solves, which keeps
    the inverse exactly equal to the composition of the two Laplacian
    inverses.
    """

    def __init__(self, grid: SpaceGrid, laplacian: DirichletLaplacian | None = None):
        self.grid = grid
        self._lap = laplacian if laplacian is not None else DirichletLaplacian(grid)
        self.factorization = self._lap.factorization

    def solve_full(self, rhs: np.ndarray) -> np.ndarray:
        return self._lap.solve_full(self._lap.solve_full(rhs))


def laplacian_apply(g: SpatialField, op: DirichletLaplacian | None = None) -> SpatialField:
    """Apply the zero-Dirichlet central-difference Laplacian to a field.

    Boundary values of ``g`` are ignored (enforced to zero); the output is
    zero at the boundary nodes.
    """
    if op is None:
        op = DirichletLaplacian(g.grid)
    elif op.grid != g.grid:
        raise StructuralError("operator grid does not match field grid")
    return SpatialField(op.apply_full(g.values), g.grid)


def laplacian_solve(rhs: SpatialField, op: DirichletLaplacian | None = None) -> SpatialField:
    """Solve Lap(z) = rhs with zero Dirichlet boundary values."""
    if op is None:
        op = DirichletLaplacian(rhs.grid)
    elif op.grid != rhs.grid:
        raise StructuralError("operator grid does not match field grid")
    return SpatialField(op.solve_full(rhs.values), rhs.grid)


def bilaplacian_solve(rhs: SpatialField, op: DirichletBiLaplacian | None = None) -> SpatialField:
    """Solve Lap(Lap(z)) = rhs with zero Dirichlet boundary values."""
    if op is None:
        op = DirichletBiLaplacian(rhs.grid)
    elif op.grid != rhs.grid:
        raise StructuralError("operator grid does not match field grid")
    return SpatialField(op.solve_full(rhs.values), rhs.grid)


def time_derivative(f: SpaceTimeField) -> SpaceTimeField:
    """Backward-difference time derivative of a space-time field.

    Row n (n >= 1) is (f_n - f_{n-1}) / dt.  Row 0 is set equal to row 1;
    the residual map never reads it (time row 0 only enters through the
    initial-condition component).
    """
    dt = f.time.dt
    out = np.empty_like(f.values)
    out[1:] = (f.values[1:] - f.values[:-1]) / dt
    out[0] = out[1]
    return f.with_values(out)
