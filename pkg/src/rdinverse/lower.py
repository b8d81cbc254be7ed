"""Lower-level Landweber iteration on the PDE state.

The residual map F sends a state u to the pair (PDE rows, initial mismatch).
Its linearization is transposed *exactly* (as a matrix, under the discrete
inner products below), so the adjoint identity holds to round-off rather
than to discretization order.

Inner products
--------------
The state space carries the graph product of the parabolic setting (the
spatial (-Lap) part plus the dual-weighted discrete time derivative), the
residual's PDE component carries the (-Lap)^{-1}-weighted product, and the
initial-condition component carries plain L2:

    <u, v>_V   = sum_n wt_n * h * u_n . (-Lap) v_n
                 + sum_m dt * h * (Du)_m . (-Lap)^{-1} (Dv)_m
    <r, s>_U*  = sum_n wt_n * h * r_n . (-Lap)^{-1} s_n
    <g1,g2>_H  = sum_i wx_i * g1_i * g2_i

with wt the trapezoid weights in time, h the uniform interior spatial
weight, and (Du)_m = (u_m - u_{m-1})/dt the backward time differences.
The graph part is essential: under the plain (-Lap) product alone the
linearized residual map has operator norm ~ 2/(dt*pi^2) while the
directions that repair the initial mismatch sit near sigma ~ 1, so the
stable step size collapses and the iteration crawls.  With the graph
product the map is near-isometric and the residual decays at the rates the
run-level checks demand.

One Landweber step is u <- u - omega * F'(u)^* F(u).  The adjoint is
z = M^{-1} (T^t W K^{-1} r + E0^t M_x g) with K = -Lap per time slice, W
the quadrature weighting, T the linearized PDE rows, E0 the row-0
extractor, and M the Gram matrix of <.,.>_V; M decouples in the sine
eigenbasis of the interior Laplacian into one SPD tridiagonal system per
spatial mode (a discrete second-order-in-time, fourth-order-in-space
boundary value problem), factorized once per problem and reused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.fft import dst, idst

from .errors import DivergenceError, StagnationError, StructuralError
from .forward import PdeProblem, ResidualPair, pde_residual
from .grids import SpaceTimeField, SpatialField, inner_l2_space, norm_l2_space
from .reactions import ReactionCurve, derivative_curve, interp_on
from .stopping import StoppingRule, lower_should_stop


@dataclass(frozen=True)
class LowerState:
    """Outcome of one lower-level run."""

    u: SpaceTimeField
    residual_norm: float
    iterations_used: int
    residual_history: tuple = ()

    def __post_init__(self):
        if self.residual_norm < 0 or self.iterations_used < 0:
            raise StructuralError("lower state needs nonnegative residual and count")


@dataclass
class StepPolicy:
    """Step-size selection by operator-norm power iteration.

    omega = safety / lambda_max where lambda_max estimates ||F'||^2 through
    ``power_iterations`` rounds on F'(u)* F'(u) at the run's initial state.
    The estimate is refreshed (at the current iterate) the first time
    backtracking triggers; after that the step is halved at most
    ``max_backtracks`` times before the run is declared stagnant.
    """

    safety: float = 0.9
    power_iterations: int = 12
    max_backtracks: int = 30
    seed: int = 0
    omega_override: Optional[float] = None
    cache_omega: bool = False
    _cached: Optional[float] = field(default=None, repr=False, compare=False)

    def lower_omega(self, problem, curve, u, pd_samples) -> float:
        if self.omega_override is not None:
            return self.omega_override
        if self.cache_omega and self._cached is not None:
            return self._cached
        lam = _power_iteration_lower(
            problem, curve, u, pd_samples, self.power_iterations, self.seed
        )
        omega = self.safety / max(lam, 1e-300)
        if self.cache_omega:
            self._cached = omega
        return omega


# ---------------------------------------------------------------------------
# inner products and norms on the residual/state spaces
# ---------------------------------------------------------------------------


def _neg_lap_inv_rows(problem: PdeProblem, rows: np.ndarray) -> np.ndarray:
    """Apply (-Lap)^{-1} to each row (interior width)."""
    return -problem.laplacian.solve_interior(rows)


def dual_inner(problem: PdeProblem, p1: ResidualPair, p2: ResidualPair) -> float:
    """Inner product on U* x H between two residual pairs."""
    wt = problem.time.weights
    h = problem.space.h
    r1 = p1.pde.values[:, 1:-1]
    r2 = p2.pde.values[:, 1:-1]
    kinv_r2 = _neg_lap_inv_rows(problem, r2)
    with np.errstate(over="ignore", invalid="ignore"):
        pde_part = float(np.sum(wt[:, None] * r1 * kinv_r2) * h)
    return pde_part + inner_l2_space(p1.init, p2.init)


def residual_norm(problem: PdeProblem, pair: ResidualPair) -> float:
    """Norm of a residual pair in U* x H (infinite when the products
    overflow, so callers can backtrack instead of crashing)."""
    val = dual_inner(problem, pair, pair)
    if not math.isfinite(val):
        return math.inf
    return math.sqrt(max(val, 0.0))


def state_inner(problem: PdeProblem, f1: SpaceTimeField, f2: SpaceTimeField) -> float:
    """The graph inner product on the state space (see module docstring)."""
    wt = problem.time.weights
    h = problem.space.h
    dt = problem.time.dt
    neg_lap_f2 = -problem.laplacian.apply_full(f2.values)
    u_part = float(np.sum(wt[:, None] * f1.values * neg_lap_f2) * h)
    d1 = (f1.values[1:, 1:-1] - f1.values[:-1, 1:-1]) / dt
    d2 = (f2.values[1:, 1:-1] - f2.values[:-1, 1:-1]) / dt
    kinv_d2 = _neg_lap_inv_rows(problem, d2)
    dual_part = float(np.sum(d1 * kinv_d2) * dt * h)
    return u_part + dual_part


def state_norm(problem: PdeProblem, f: SpaceTimeField) -> float:
    return math.sqrt(max(state_inner(problem, f, f), 0.0))


class _VMetric:
    """Factorized Gram matrix of the graph inner product on the state space.

    In the sine eigenbasis of the interior Laplacian the Gram matrix
    decouples into one SPD tridiagonal system per spatial mode; all modes
    are LU-factorized together (vectorized Thomas algorithm) once per
    problem, so each adjoint application costs one sine transform pair and
    two triangular sweeps.
    """

    def __init__(self, problem: PdeProblem):
        nt = problem.time.n_t
        dt = problem.time.dt
        wt = problem.time.weights
        h = problem.space.h
        m = problem.space.n_x - 2
        jj = np.arange(1, m + 1)
        lam = (2.0 - 2.0 * np.cos(jj * np.pi / (m + 1))) / h**2
        # tridiagonal Gram per mode: h*lam*W_t + h/(lam*dt) * D^t D * dt
        stiff = np.full(nt, 2.0)
        stiff[0] = stiff[-1] = 1.0
        diag = h * lam[None, :] * wt[:, None] + (h / (lam * dt))[None, :] * stiff[:, None]
        self._off = -(h / (lam * dt))
        self._fac = np.empty((nt - 1, m))
        self._diag = np.empty_like(diag)
        self._diag[0] = diag[0]
        for n in range(1, nt):
            self._fac[n - 1] = self._off / self._diag[n - 1]
            self._diag[n] = diag[n] - self._fac[n - 1] * self._off

    def solve(self, interior_rows: np.ndarray) -> np.ndarray:
        """Solve M z = y for y given on the time x interior-node lattice."""
        y = dst(interior_rows, type=1, axis=1, norm="ortho")
        nt = y.shape[0]
        for n in range(1, nt):
            y[n] -= self._fac[n - 1] * y[n - 1]
        y[-1] /= self._diag[-1]
        for n in range(nt - 2, -1, -1):
            y[n] = (y[n] - self._off * y[n + 1]) / self._diag[n]
        return idst(y, type=1, axis=1, norm="ortho")


def _v_metric(problem: PdeProblem) -> _VMetric:
    # one factorization per problem, stashed on the instance like its
    # Laplacian and stepping factorizations
    metric = problem.__dict__.get("_v_metric")
    if metric is None:
        metric = _VMetric(problem)
        object.__setattr__(problem, "_v_metric", metric)
    return metric


# ---------------------------------------------------------------------------
# linearized residual and its exact transpose
# ---------------------------------------------------------------------------


def _pd_at(problem, pd_curve: ReactionCurve, u_values: np.ndarray) -> np.ndarray:
    """Interpolated reaction derivative Pi'(u) on the interior nodes."""
    return interp_on(pd_curve, u_values[:, 1:-1])


def linearized_apply(
    problem: PdeProblem,
    curve: ReactionCurve,
    u: SpaceTimeField,
    h_dir: SpaceTimeField,
    pd_curve: Optional[ReactionCurve] = None,
) -> ResidualPair:
    """Apply the linearization F'(u) to a state direction.

    PDE rows: dh/dt - a*Lap(h) + b*h + Pi'(u)*h with the same backward time
    differences as the residual; initial component: h(0, .).
    """
    if pd_curve is None:
        pd_curve = derivative_curve(curve)
    lap = problem.laplacian.apply_full(h_dir.values)
    dt = problem.time.dt
    a = problem.a.values
    b = problem.b.values
    hv = h_dir.values
    pde = np.zeros_like(hv)
    mult = b[None, 1:-1] + _pd_at(problem, pd_curve, u.values)
    pde[1:, 1:-1] = (
        (hv[1:, 1:-1] - hv[:-1, 1:-1]) / dt
        - a[None, 1:-1] * lap[1:, 1:-1]
        + mult[1:] * hv[1:, 1:-1]
    )
    init = SpatialField(hv[0].copy(), problem.space)
    init_vals = init.values
    init_vals[0] = 0.0
    init_vals[-1] = 0.0
    return ResidualPair(SpaceTimeField(pde, u.space, u.time), init)


def lower_adjoint(
    problem: PdeProblem,
    curve: ReactionCurve,
    u: SpaceTimeField,
    pair: ResidualPair,
    pd_curve: Optional[ReactionCurve] = None,
) -> SpaceTimeField:
    """Exact transpose of ``linearized_apply`` under the discrete products.

    Satisfies <F'(u) h, pair>_{U* x H} = <h, z>_V for every direction h, to
    round-off, because each factor is transposed as the matrix it is:
    z = M^{-1} (T^t W K^{-1} r + E0^t M_x g) with M the Gram matrix of the
    graph product on the state space.
    """
    if pd_curve is None:
        pd_curve = derivative_curve(curve)
    wt = problem.time.weights
    h = problem.space.h
    dt = problem.time.dt
    nt = problem.time.n_t
    a = problem.a.values

    r = pair.pde.values[:, 1:-1].copy()
    r[0] = 0.0  # row 0 of the PDE component is structurally zero
    # S = W K^{-1} r, row by row
    s = _neg_lap_inv_rows(problem, r)
    s *= wt[:, None] * h

    # A = T^t S: transpose of the backward time difference plus, per row
    # n >= 1, the transposed spatial operator (-Lap) diag(a) + diag(b+Pi'(u)).
    atop = np.zeros((nt, problem.space.n_x))
    atop[1:-1, 1:-1] = (s[1:-1] - s[2:]) / dt
    atop[-1, 1:-1] = s[-1] / dt
    atop[0, 1:-1] = -s[1] / dt

    full_s = np.zeros((nt, problem.space.n_x))
    full_s[1:, 1:-1] = s[1:]
    lap_as = problem.laplacian.apply_full(a[None, :] * full_s)
    mult = problem.b.values[None, 1:-1] + _pd_at(problem, pd_curve, u.values)
    atop[1:, 1:-1] += -lap_as[1:, 1:-1] + mult[1:] * s[1:]

    # + E0^t M g  (the H-pairing of the initial component)
    g = pair.init.values
    atop[0, 1:-1] += h * g[1:-1]

    # z = M^{-1} A  (Gram solve in the graph metric)
    z = np.zeros_like(atop)
    z[:, 1:-1] = _v_metric(problem).solve(atop[:, 1:-1])
    return SpaceTimeField(z, u.space, u.time)


def _power_iteration_lower(problem, curve, u, pd_samples, iterations, seed) -> float:
    """Estimate lambda_max of F'(u)* F'(u) in the U geometry."""
    pd_curve = pd_samples
    rng = np.random.default_rng(seed)
    vals = np.zeros((problem.time.n_t, problem.space.n_x))
    vals[:, 1:-1] = rng.standard_normal(vals[:, 1:-1].shape)
    h_dir = SpaceTimeField(vals, u.space, u.time)
    lam = 0.0
    nrm = state_norm(problem, h_dir)
    h_dir = h_dir.with_values(h_dir.values / max(nrm, 1e-300))
    for _ in range(iterations):
        pair = linearized_apply(problem, curve, u, h_dir, pd_curve)
        w = lower_adjoint(problem, curve, u, pair, pd_curve)
        lam = state_inner(problem, h_dir, w)  # Rayleigh quotient; ||h|| = 1
        wn = state_norm(problem, w)
        if wn <= 0:
            return max(lam, 1e-300)
        h_dir = w.with_values(w.values / wn)
    return max(lam, 1e-300)


def lower_run(
    problem: PdeProblem,
    curve: ReactionCurve,
    u_init: SpaceTimeField,
    rule: StoppingRule,
    step: Optional[StepPolicy] = None,
    j: int = 0,
    prev_misfit: float = math.inf,
    max_iterations: int = 200_000,
) -> LowerState:
    """Landweber iteration on the state until the stopping rule fires.

    The rule is checked before the first iteration, so a warm start that
    already satisfies it returns with ``iterations_used == 0``.  Each step
    must not increase the residual; on an increase the step size is
    re-estimated once and then halved, up to the policy's backtrack budget.
    """
    if step is None:
        step = StepPolicy()
    if u_init.space != problem.space or u_init.time != problem.time:
        raise StructuralError("u_init lives on different grids than the problem")
    pd_curve = derivative_curve(curve)

    u = u_init
    pair = pde_residual(problem, curve, u)
    if not (
        np.all(np.isfinite(pair.pde.values)) and np.all(np.isfinite(pair.init.values))
    ):
        raise DivergenceError("lower-level residual is non-finite at entry")
    res = residual_norm(problem, pair)
    history = [res]
    k = 0
    omega = None

    def try_step(om):
        vals = u.values - om * z.values
        if not np.all(np.isfinite(vals)):
            return None, None, math.inf
        cand = u.with_values(vals)
        cand_pair = pde_residual(problem, curve, cand)
        return cand, cand_pair, residual_norm(problem, cand_pair)

    while not lower_should_stop(rule, k, res, j, prev_misfit):
        if k >= max_iterations:
            raise StagnationError(
                "lower-level rule did not fire within the iteration budget",
                diagnostics={"k": k, "residual": res, "omega": omega},
            )
        if omega is None:
            omega = step.lower_omega(problem, curve, u, pd_curve)
        z = lower_adjoint(problem, curve, u, pair, pd_curve)
        cand, cand_pair, cand_res = try_step(omega)
        if not cand_res <= res:
            # refresh the norm estimate at the current iterate, then halve
            if step.omega_override is None:
                lam = _power_iteration_lower(
                    problem, curve, u, pd_curve, step.power_iterations, step.seed
                )
                omega = step.safety / max(lam, 1e-300)
                if step.cache_omega:
                    step._cached = omega
                cand, cand_pair, cand_res = try_step(omega)
            backtracks = 0
            while not cand_res <= res and backtracks < step.max_backtracks:
                omega *= 0.5
                cand, cand_pair, cand_res = try_step(omega)
                backtracks += 1
            if not cand_res <= res:
                raise StagnationError(
                    "lower-level residual would not decrease",
                    diagnostics={"k": k, "residual": res, "omega": omega},
                )
        u, pair, res = cand, cand_pair, cand_res
        k += 1
        history.append(res)

    return LowerState(u, res, k, tuple(history))
