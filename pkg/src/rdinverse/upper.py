"""Upper-level Landweber iteration on the reaction curve.

Per upper step j: run the lower level to get an approximate state for the
current curve, form the data misfit residual, solve the adjoint equation
backward in time, push the adjoint through the Fourier-multiplier integral
to get the H^s gradient, and update the curve.  In sequential mode each
lower run starts from the previously accepted trajectory; in standard mode
it restarts from the fixed warm-start field (zero by default).

Adjoint discretization
----------------------
The backward sweep is implicit Euler in reversed time, and its source and
terminal row carry the trapezoid quadrature weights in such a way that the
composition adjoint_state -> adjoint_integral is the exact transpose of the
linearized implicit forward map.  Concretely, with B_n = I - dt*diag(a)*Lap
+ dt*diag(b + Pi'(u_n)) on the interior nodes:

    full data:      zeta_N = B_N^{-1}(dt/2 * v_N),
                    zeta_m = B_m^{-1}(zeta_{m+1} + dt * v_m),  m = N-1..1
    terminal data:  zeta_N = B_N^{-1} v,   zeta_m = B_m^{-1} zeta_{m+1}

and the returned field doubles the terminal row (compensating its half
trapezoid weight) and zeroes row 0, so that pairing it with trapezoid
weights reproduces the uniform-weight sum the transpose requires.  The
terminal condition z(T) = v (terminal data) resp. z(T) = 0 (full data)
holds up to O(dt).
"""

from __future__ import annotations

import dataclasses
import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import DivergenceError, StructuralError
from .forward import (
    Observation,
    PdeProblem,
    implicit_solve,
    misfit_norm,
    observation_residual,
)
from .grids import (
    SpaceTimeField,
    SpatialField,
    norm_l2_spacetime,
    zeros_spacetime,
)
from .lower import LowerState, StepPolicy, lower_run
from .reactions import (
    RangeGrid,
    ReactionCurve,
    SobolevSpec,
    derivative_curve,
    hs_inner,
    hs_norm,
    interp_on,
    l2_range_norm,
    sobolev_multipliers,
)
from .stopping import StoppingRule, upper_should_stop


@dataclass(frozen=True)
class InversionConfig:
    """Everything the inversion loop needs besides problem, data, and the
    initial curve."""

    mode: str = "sequential"
    observation_mode: str = "full"
    sobolev: SobolevSpec = SobolevSpec(1.5)
    lower_rule: StoppingRule = None
    upper_rule: StoppingRule = None
    lower_step: StepPolicy = None
    upper_step: StepPolicy = None
    max_upper_iterations: int = 1000
    range_grid: RangeGrid = RangeGrid(50)

    def __post_init__(self):
        if self.mode not in ("standard", "sequential"):
            raise StructuralError(f"unknown inversion mode {self.mode!r}")
        if self.observation_mode not in ("full", "terminal"):
            raise StructuralError(f"unknown observation mode {self.observation_mode!r}")
        if self.lower_rule is None or self.upper_rule is None:
            raise StructuralError("both stopping rules must be set")
        if self.max_upper_iterations < 0:
            raise StructuralError("max_upper_iterations must be nonnegative")
        if self.lower_step is None:
            object.__setattr__(self, "lower_step", StepPolicy())
        if self.upper_step is None:
            object.__setattr__(self, "upper_step", StepPolicy())


@dataclass
class RunRecord:
    j: int
    kappa: int
    lower_residual: float
    misfit: float
    param_error: float
    state_error: float
    wall_ms: float


@dataclass
class RunLog:
    """Per-upper-iteration records plus the reason the loop ended."""

    records: list = field(default_factory=list)
    stop_reason: str = ""

    CSV_HEADER = "j,kappa,lower_residual,misfit,param_error,state_error,wall_ms"

    def append(self, rec: RunRecord):
        if self.records and rec.j <= self.records[-1].j:
            raise StructuralError("run log indices must be strictly increasing")
        self.records.append(rec)

    @property
    def sum_kappa(self) -> int:
        return sum(r.kappa for r in self.records)

    def to_csv(self, path, record_timing: bool = False):
        lines = [self.CSV_HEADER]
        for r in self.records:
            wall = r.wall_ms if record_timing else 0.0
            lines.append(
                f"{r.j},{r.kappa},{r.lower_residual!r},{r.misfit!r},"
                f"{r.param_error!r},{r.state_error!r},{wall!r}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# adjoint state and gradient assembly
# ---------------------------------------------------------------------------


def _reaction_multiplier(problem, pd_curve, u_values) -> np.ndarray:
    """Rows of b + Pi'(u) on the interior nodes."""
    return problem.b.values[None, 1:-1] + interp_on(pd_curve, u_values[:, 1:-1])


def _step_banded(problem, c_row: np.ndarray) -> np.ndarray:
    """Banded I - dt*diag(a)*Lap + dt*diag(c) on the interior nodes."""
    dt = problem.time.dt
    h2 = problem.space.h**2
    a_int = problem.a.values[1:-1]
    m = a_int.size
    ab = np.zeros((3, m))
    ab[1] = 1.0 + 2.0 * dt * a_int / h2 + dt * c_row
    ab[0, 1:] = -dt * a_int[:-1] / h2
    ab[2, :-1] = -dt * a_int[1:] / h2
    return ab


def adjoint_state(
    problem: PdeProblem,
    curve: ReactionCurve,
    u: SpaceTimeField,
    v,
    mode: str,
    pd_curve: Optional[ReactionCurve] = None,
) -> SpaceTimeField:
    """Solve the linearized dual equation backward in time.

    Full data: v is a space-time residual field acting as interior source,
    terminal value ~ 0.  Terminal data: v is a spatial field entering as the
    terminal value, zero source.  See the module docstring for the exact
    weighting; the result is shaped so that ``adjoint_integral`` applied to
    it transposes the linearized implicit forward map exactly.
    """
    if pd_curve is None:
        pd_curve = derivative_curve(curve)
    nt, nx = problem.time.n_t, problem.space.n_x
    dt = problem.time.dt
    mult = _reaction_multiplier(problem, pd_curve, u.values)
    out = np.zeros((nt, nx))
    last = nt - 1

    if mode == "full":
        v_vals = v.values
        ab = _step_banded(problem, mult[last])
        zeta = solve_banded((1, 1), ab, 0.5 * dt * v_vals[last, 1:-1])
        out[last, 1:-1] = 2.0 * zeta
        for n in range(last - 1, 0, -1):
            ab = _step_banded(problem, mult[n])
            zeta = solve_banded((1, 1), ab, zeta + dt * v_vals[n, 1:-1])
            out[n, 1:-1] = zeta
    elif mode == "terminal":
        ab = _step_banded(problem, mult[last])
        zeta = solve_banded((1, 1), ab, v.values[1:-1])
        out[last, 1:-1] = 2.0 * zeta
        for n in range(last - 1, 0, -1):
            ab = _step_banded(problem, mult[n])
            zeta = solve_banded((1, 1), ab, zeta)
            out[n, 1:-1] = zeta
    else:
        raise StructuralError(f"unknown observation mode {mode!r}")
    return SpaceTimeField(out, u.space, u.time)


def adjoint_integral(
    u: SpaceTimeField,
    z: SpaceTimeField,
    spec: SobolevSpec,
    grid: RangeGrid,
) -> ReactionCurve:
    """Assemble the H^s gradient from state and adjoint state.

    For each DFT frequency omega_k of the range grid's periodic extension,
    accumulate G_k = sum_{t,x} w_{t,x} exp(-i omega_k u(t,x)) z(t,x) with
    trapezoid weights, damp by (1 + omega_k^2)^{-s}, and return the inverse
    DFT (with the phase shift that anchors the grid at u_min), scaled by
    -1/h_r so the result samples the continuous inverse transform.
    """
    if u.space != z.space or u.time != z.time:
        raise StructuralError("state and adjoint state live on different grids")
    w = np.outer(u.time.weights, u.space.weights)
    weighted = (w * z.values).ravel()
    uf = u.values.ravel()
    om = grid.frequencies
    g = np.exp(-1j * np.outer(om, uf)) @ weighted
    mult = sobolev_multipliers(grid, spec)
    phase = np.exp(1j * om * grid.u_min)
    vals = -(1.0 / grid.h_r) * np.fft.ifft(mult * phase * g)
    return ReactionCurve(vals.real, grid)


def upper_gradient(
    problem: PdeProblem,
    curve: ReactionCurve,
    lower_out: LowerState,
    obs: Observation,
    sobolev: SobolevSpec,
    range_grid: RangeGrid,
    pd_curve: Optional[ReactionCurve] = None,
) -> ReactionCurve:
    """The misfit gradient in H^s at the given curve/approximate state."""
    v = observation_residual(lower_out.u, obs)
    z = adjoint_state(problem, curve, lower_out.u, v, obs.mode, pd_curve)
    return adjoint_integral(lower_out.u, z, sobolev, range_grid)


def _linearized_forward(problem, curve, u, xi, pd_curve) -> SpaceTimeField:
    """Derivative of the implicit forward map with respect to the curve:
    B_n p_n = p_{n-1} - dt*xi(u_n), p_0 = 0."""
    nt, nx = problem.time.n_t, problem.space.n_x
    dt = problem.time.dt
    mult = _reaction_multiplier(problem, pd_curve, u.values)
    out = np.zeros((nt, nx))
    p = np.zeros(nx - 2)
    for n in range(1, nt):
        ab = _step_banded(problem, mult[n])
        p = solve_banded((1, 1), ab, p - dt * interp_on(xi, u.values[n, 1:-1]))
        out[n, 1:-1] = p
    return SpaceTimeField(out, u.space, u.time)


def _power_iteration_upper(
    problem, curve, u, obs_mode, sobolev, range_grid, iterations, seed
) -> float:
    """Estimate ||G'||^2 (X -> Y operator norm squared) by power iteration
    on G'(Pi)* G'(Pi)."""
    pd_curve = derivative_curve(curve)
    rng = np.random.default_rng(seed)
    xi = ReactionCurve(rng.standard_normal(range_grid.n_r), range_grid)
    xi = xi.with_samples(xi.samples / max(hs_norm(xi, sobolev), 1e-300))
    lam = 0.0
    for _ in range(iterations):
        p = _linearized_forward(problem, curve, u, xi, pd_curve)
        if obs_mode == "full":
            v = p
        else:
            v = SpatialField(p.values[-1].copy(), problem.space)
        z = adjoint_state(problem, curve, u, v, obs_mode, pd_curve)
        # the minus built into adjoint_integral is the transpose of the
        # linearized PDE's -xi(u) source, so this chain is G'* as it stands
        g = adjoint_integral(u, z, sobolev, range_grid)
        lam = hs_inner(xi, g, sobolev)
        gn = hs_norm(g, sobolev)
        if gn <= 0:
            return max(lam, 1e-300)
        xi = g.with_samples(g.samples / gn)
    return max(lam, 1e-300)


def upper_omega(
    step: StepPolicy,
    problem,
    curve,
    obs_mode,
    sobolev,
    range_grid,
) -> float:
    """Step size safety / ||G'||^2, with the norm estimated at the
    time-marched state for the given curve.

    The estimate is anchored on the PDE manifold rather than at the current
    lower iterate: early lower iterates cluster near zero, where the
    Nemytskii linearization is nearly degenerate and would give a uselessly
    small norm (hence a wildly large step).
    """
    if step.omega_override is not None:
        return step.omega_override
    u_ref = implicit_solve(problem, curve)
    lam = _power_iteration_upper(
        problem, curve, u_ref, obs_mode, sobolev, range_grid,
        step.power_iterations, step.seed,
    )
    return step.safety / max(lam, 1e-300)


# ---------------------------------------------------------------------------
# the full inversion loop
# ---------------------------------------------------------------------------


def run_inversion(
    problem: PdeProblem,
    curve_init: ReactionCurve,
    obs: Observation,
    cfg: InversionConfig,
    truth_curve: Optional[ReactionCurve] = None,
    truth_state: Optional[SpaceTimeField] = None,
    on_accept: Optional[Callable] = None,
) -> tuple:
    """Run the bi-level inversion; returns (final curve, run log).

    A candidate curve update is accepted only if it strictly decreases the
    data misfit; otherwise the upper step size is re-estimated once and then
    halved, up to the policy's backtrack budget, after which the loop stops
    with reason "no_descent".  In sequential mode every lower run starts
    from the previously accepted trajectory; in standard mode it starts from
    the zero field.
    """
    if obs.mode != cfg.observation_mode:
        raise StructuralError("observation mode disagrees with the configuration")
    y_norm = obs.norm()
    log = RunLog()
    zero_field = zeros_spacetime(problem.space, problem.time)
    # One norm estimate serves every lower run here (refreshed on backtrack):
    # the lower operator depends on the curve only through Pi'(u), a small
    # perturbation of the dominant stiff terms.
    lower_step = dataclasses.replace(cfg.lower_step, cache_omega=True)

    def errors(curve, state):
        perr = math.nan
        serr = math.nan
        if truth_curve is not None:
            diff = curve.with_samples(curve.samples - truth_curve.samples)
            perr = l2_range_norm(diff)
        if truth_state is not None:
            dv = state.u.values - truth_state.values
            serr = norm_l2_spacetime(SpaceTimeField(dv, state.u.space, state.u.time))
        return perr, serr

    t0 = _time.perf_counter()
    init_misfit = misfit_norm(zero_field, obs)
    state = lower_run(
        problem, curve_init, zero_field, cfg.lower_rule, lower_step,
        j=0, prev_misfit=init_misfit,
    )
    misfit = misfit_norm(state.u, obs)
    curve = curve_init
    perr, serr = errors(curve, state)
    log.append(RunRecord(0, state.iterations_used, state.residual_norm,
                         misfit, perr, serr, (_time.perf_counter() - t0) * 1e3))
    if on_accept is not None:
        on_accept(0, curve, state)

    j = 0
    omega = None
    while True:
        if upper_should_stop(cfg.upper_rule, j, misfit, y_norm):
            log.stop_reason = "upper_rule"
            break
        if j >= cfg.max_upper_iterations:
            log.stop_reason = "max_upper_iterations"
            break
        t0 = _time.perf_counter()
        pd_curve = derivative_curve(curve)
        grad = upper_gradient(problem, curve, state, obs, cfg.sobolev,
                              cfg.range_grid, pd_curve)
        if omega is None:
            omega = upper_omega(cfg.upper_step, problem, curve,
                                obs.mode, cfg.sobolev, cfg.range_grid)

        start_field = state.u if cfg.mode == "sequential" else zero_field
        accepted = False
        refreshed = False
        backtracks = 0
        while True:
            cand_samples = curve.samples - omega * grad.samples
            if not np.all(np.isfinite(cand_samples)):
                log.stop_reason = "divergence"
                exc = DivergenceError(f"upper iterate became non-finite at j={j + 1}")
                exc.partial = (curve, log)  # last accepted curve and log so far
                raise exc
            cand_curve = curve.with_samples(cand_samples)
            try:
                cand_state = lower_run(
                    problem, cand_curve, start_field, cfg.lower_rule, lower_step,
                    j=j + 1, prev_misfit=misfit,
                )
                cand_misfit = misfit_norm(cand_state.u, obs)
            except DivergenceError:
                # a wildly overshooting candidate is a rejection, not a crash
                cand_misfit = math.inf
            if cand_misfit < misfit:
                accepted = True
                break
            if not refreshed and cfg.upper_step.omega_override is None:
                try:
                    omega = upper_omega(cfg.upper_step, problem, curve,
                                        obs.mode, cfg.sobolev, cfg.range_grid)
                except DivergenceError:
                    pass  # keep the current omega; halving still applies
                refreshed = True
                continue
            if backtracks >= cfg.upper_step.max_backtracks:
                break
            omega *= 0.5
            backtracks += 1
        if not accepted:
            log.stop_reason = "no_descent"
            break

        curve, state, misfit = cand_curve, cand_state, cand_misfit
        j += 1
        perr, serr = errors(curve, state)
        log.append(RunRecord(j, state.iterations_used, state.residual_norm,
                             misfit, perr, serr, (_time.perf_counter() - t0) * 1e3))
        if on_accept is not None:
            on_accept(j, curve, state)

    return curve, log
