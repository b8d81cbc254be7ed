"""The forward model: residual map, solvers, observations, noise.

The lower-level residual discretizes

    du/dt - div(a grad u) + b u + Pi(u) - phi        (interior nodes, t > 0)
    u(0, .) - u0                                     (initial condition)

with backward time differences and the central-difference Laplacian.  Two
solvers live here:

* ``reference_solve`` -- semi-implicit Euler (implicit diffusion, explicit
  reaction).  Used only to manufacture synthetic observations; the inversion
  itself never calls it.
* ``implicit_solve`` -- Newton time marching on the *same* backward-difference
  system the residual measures, so its output zeroes the residual to
  round-off.  Diagnostics use it when they need the exact discrete
  parameter-to-state map rather than a Landweber approximation of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve, solve_banded

from .errors import ConfigurationError, DivergenceError, StructuralError
from .grids import (
    SpaceGrid,
    SpaceTimeField,
    SpatialField,
    TimeGrid,
    norm_l2_space,
    norm_l2_spacetime,
)
from .operators import DirichletLaplacian, _interior_laplacian_matrix, time_derivative
from .reactions import ReactionCurve, interp_on, interval_slopes


@dataclass(frozen=True)
class PdeProblem:
    """Coefficients, source, initial condition, and grids of the PDE.

    Fields
    ------
    a : SpatialField
        Diffusivity, strictly positive.
    b : SpatialField
        Zeroth-order potential.
    phi : SpaceTimeField
        Source term.
    u0 : SpatialField
        Initial condition; must vanish at the boundary nodes.
    """

    a: SpatialField
    b: SpatialField
    phi: SpaceTimeField
    u0: SpatialField
    space: SpaceGrid
    time: TimeGrid

    def __post_init__(self):
        for name, f in (("a", self.a), ("b", self.b), ("u0", self.u0)):
            if f.grid != self.space:
                raise StructuralError(f"{name} lives on a different space grid")
        if self.phi.space != self.space or self.phi.time != self.time:
            raise StructuralError("phi lives on different grids")
        if np.any(self.a.values <= 0):
            raise StructuralError("diffusivity a must be strictly positive")
        if self.u0.values[0] != 0.0 or self.u0.values[-1] != 0.0:
            raise StructuralError("u0 must satisfy the zero Dirichlet boundary")

    @property
    def laplacian(self) -> DirichletLaplacian:
        # one factorization per problem, built on first use
        lap = self.__dict__.get("_lap")
        if lap is None:
            lap = DirichletLaplacian(self.space)
            object.__setattr__(self, "_lap", lap)
        return lap

    def _stepping_factorization(self):
        """LU of the semi-implicit stepping operator I - dt*diag(a)*Lap."""
        fact = self.__dict__.get("_step_fact")
        if fact is None:
            m = _interior_laplacian_matrix(self.space)
            a_int = self.a.values[1:-1]
            mat = np.eye(self.space.n_x - 2) - self.time.dt * a_int[:, None] * m
            fact = lu_factor(mat)
            object.__setattr__(self, "_step_fact", fact)
        return fact


@dataclass(frozen=True)
class ResidualPair:
    """The two components of the residual map: the PDE rows (time rows
    1..n_t-1 are meaningful, row 0 is kept zero) and the initial-condition
    mismatch."""

    pde: SpaceTimeField
    init: SpatialField


@dataclass(frozen=True)
class Observation:
    """Full-field or terminal-time measurement of the state."""

    mode: str
    data: Union[SpaceTimeField, SpatialField]
    noise_level: float = 0.0

    def __post_init__(self):
        if self.mode == "full":
            if not isinstance(self.data, SpaceTimeField):
                raise StructuralError("full observation needs a space-time field")
        elif self.mode == "terminal":
            if not isinstance(self.data, SpatialField):
                raise StructuralError("terminal observation needs a spatial field")
        else:
            raise ConfigurationError(
                f"unknown observation mode {self.mode!r}", field="observation"
            )

    def norm(self) -> float:
        if self.mode == "full":
            return norm_l2_spacetime(self.data)
        return norm_l2_space(self.data)


def pde_residual(problem: PdeProblem, curve: ReactionCurve, u: SpaceTimeField) -> ResidualPair:
    """Evaluate the backward-difference residual of the PDE at a state.

    Returns the pair (pde rows, initial mismatch).  PDE rows carry zeros on
    the boundary columns and in time row 0.
    """
    if u.space != problem.space or u.time != problem.time:
        raise StructuralError("state lives on different grids than the problem")
    lap = problem.laplacian.apply_full(u.values)
    dudt = time_derivative(u).values
    a = problem.a.values
    b = problem.b.values
    pde = np.zeros_like(u.values)
    pde[1:] = (
        dudt[1:]
        - a[None, :] * lap[1:]
        + b[None, :] * u.values[1:]
        + interp_on(curve, u.values[1:])
        - problem.phi.values[1:]
    )
    pde[:, 0] = 0.0
    pde[:, -1] = 0.0
    init = SpatialField(u.values[0] - problem.u0.values, problem.space)
    return ResidualPair(SpaceTimeField(pde, u.space, u.time), init)


def reference_solve(problem: PdeProblem, curve: ReactionCurve) -> SpaceTimeField:
    """Semi-implicit Euler marching, used to generate synthetic data.

    Each step solves (I - dt*diag(a)*Lap) u^{n+1} = u^n + dt*(phi^{n+1}
    - b*u^n - Pi(u^n)) on the interior nodes with the cached LU
    factorization; boundary values stay zero.
    """
    fact = problem._stepping_factorization()
    nt, nx = problem.time.n_t, problem.space.n_x
    dt = problem.time.dt
    b_int = problem.b.values[1:-1]
    phi = problem.phi.values
    out = np.zeros((nt, nx))
    out[0] = problem.u0.values
    for n in range(nt - 1):
        un = out[n, 1:-1]
        rhs = un + dt * (phi[n + 1, 1:-1] - b_int * un - interp_on(curve, un))
        out[n + 1, 1:-1] = lu_solve(fact, rhs)
        if not np.all(np.isfinite(out[n + 1])):
            raise DivergenceError(f"reference solve produced non-finite values at step {n + 1}")
    return SpaceTimeField(out, problem.space, problem.time)


def _implicit_step_banded(problem, c_int: np.ndarray) -> np.ndarray:
    """Banded form of I - dt*diag(a)*Lap + dt*diag(c) on interior nodes."""
    dt = problem.time.dt
    h2 = problem.space.h**2
    a_int = problem.a.values[1:-1]
    m = a_int.size
    ab = np.zeros((3, m))
    ab[1] = 1.0 + 2.0 * dt * a_int / h2 + dt * c_int
    ab[0, 1:] = -dt * a_int[:-1] / h2
    ab[2, :-1] = -dt * a_int[1:] / h2
    return ab


def implicit_solve(
    problem: PdeProblem,
    curve: ReactionCurve,
    newton_tol: float = 1e-13,
    max_newton: int = 40,
) -> SpaceTimeField:
    """Newton time marching on the backward-difference system.

    Solves, for each time row n >= 1,

        (w - u^{n-1})/dt - a*Lap(w) + b*w + Pi(w) - phi^n = 0

    so the returned field zeroes ``pde_residual`` to round-off.  The Newton
    Jacobian uses the exact interval slopes of the interpolated curve.
    """
    nt, nx = problem.time.n_t, problem.space.n_x
    dt = problem.time.dt
    a_int = problem.a.values[1:-1]
    b_int = problem.b.values[1:-1]
    h2 = problem.space.h**2
    lap = problem.laplacian
    out = np.zeros((nt, nx))
    out[0] = problem.u0.values
    w_full = np.zeros(nx)
    for n in range(1, nt):
        prev = out[n - 1, 1:-1]
        phi_n = problem.phi.values[n, 1:-1]
        w = prev.copy()
        for _ in range(max_newton):
            w_full[1:-1] = w
            lap_w = lap.apply_full(w_full)[1:-1]
            g = w - prev - dt * (a_int * lap_w - b_int * w - interp_on(curve, w) + phi_n)
            gnorm = np.max(np.abs(g))
            if gnorm <= newton_tol:
                break
            c_int = b_int + interval_slopes(curve, w)
            ab = _implicit_step_banded(problem, c_int)
            w = w - solve_banded((1, 1), ab, g)
            if not np.all(np.isfinite(w)):
                raise DivergenceError(f"implicit solve diverged at time row {n}")
        else:
            if gnorm > 1e-9:
                raise DivergenceError(
                    f"implicit solve: Newton stalled at time row {n} (|g|={gnorm:.3e})"
                )
        out[n, 1:-1] = w
    return SpaceTimeField(out, problem.space, problem.time)


def linearized_reference_solve(
    problem: PdeProblem,
    curve: ReactionCurve,
    u_ref: SpaceTimeField,
    xi: ReactionCurve,
) -> SpaceTimeField:
    """Directional derivative of ``reference_solve`` with respect to the
    curve, in direction xi, evaluated along the trajectory ``u_ref``.

    Marches p^{n+1} = (I - dt*diag(a)*Lap)^{-1} [p^n - dt*(b*p^n
    + Pi'(u^n)*p^n + xi(u^n))] with p^0 = 0, where Pi' is the exact
    derivative of the interpolated curve (the interval slopes).
    """
    fact = problem._stepping_factorization()
    nt, nx = problem.time.n_t, problem.space.n_x
    dt = problem.time.dt
    b_int = problem.b.values[1:-1]
    out = np.zeros((nt, nx))
    for n in range(nt - 1):
        un = u_ref.values[n, 1:-1]
        pn = out[n, 1:-1]
        rhs = pn - dt * (
            b_int * pn + interval_slopes(curve, un) * pn + interp_on(xi, un)
        )
        out[n + 1, 1:-1] = lu_solve(fact, rhs)
    return SpaceTimeField(out, problem.space, problem.time)


def observe(u: SpaceTimeField, mode: str) -> Observation:
    """Extract the measured part of a state: the whole field or the final
    time slice."""
    if mode == "full":
        return Observation("full", u, 0.0)
    if mode == "terminal":
        return Observation("terminal", u.time_slice(u.time.n_t - 1), 0.0)
    raise ConfigurationError(f"unknown observation mode {mode!r}", field="observation")


def add_noise(obs: Observation, delta: float, seed: int) -> Observation:
    """Perturb an observation with Gaussian noise of exact relative level.

    The noise is drawn on the interior nodes (boundary data stays exact),
    then rescaled so that ||y_noisy - y|| = delta * ||y|| holds exactly in
    the observation's trapezoid L2 norm.
    """
    if delta < 0:
        raise ConfigurationError("noise level delta must be nonnegative", field="noise.delta")
    if delta == 0.0:
        return Observation(obs.mode, obs.data, 0.0)
    rng = np.random.default_rng(seed)
    y_norm = obs.norm()
    if obs.mode == "full":
        data = obs.data.values.copy()
        noise = np.zeros_like(data)
        noise[:, 1:-1] = rng.standard_normal(noise[:, 1:-1].shape)
        nfield = SpaceTimeField(noise, obs.data.space, obs.data.time)
        scale = delta * y_norm / norm_l2_spacetime(nfield)
        noisy = SpaceTimeField(data + scale * noise, obs.data.space, obs.data.time)
    else:
        data = obs.data.values.copy()
        noise = np.zeros_like(data)
        noise[1:-1] = rng.standard_normal(data.size - 2)
        nfield = SpatialField(noise, obs.data.grid)
        scale = delta * y_norm / norm_l2_space(nfield)
        noisy = SpatialField(data + scale * noise, obs.data.grid)
    return Observation(obs.mode, noisy, delta)


def observation_residual(u: SpaceTimeField, obs: Observation):
    """The data mismatch L(u) - y as a field of the observation's shape."""
    if obs.mode == "full":
        return SpaceTimeField(u.values - obs.data.values, u.space, u.time)
    return SpatialField(u.values[-1] - obs.data.values, obs.data.grid)


def misfit_norm(u: SpaceTimeField, obs: Observation) -> float:
    """||L(u) - y|| in the observation's trapezoid L2 norm."""
    v = observation_residual(u, obs)
    if obs.mode == "full":
        return norm_l2_spacetime(v)
    return norm_l2_space(v)


def observation_to_csv_rows(obs: Observation):
    """Serialize an observation as rows (t,x,value) or (x,value)."""
    if obs.mode == "full":
        ts = obs.data.time.nodes
        xs = obs.data.space.nodes
        return [
            (float(t), float(x), float(obs.data.values[n, i]))
            for n, t in enumerate(ts)
            for i, x in enumerate(xs)
        ]
    xs = obs.data.grid.nodes
    return [(float(x), float(v)) for x, v in zip(xs, obs.data.values)]
