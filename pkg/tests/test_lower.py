"""Lower-level Landweber iteration: linearized residual, exact transpose,
metric identities, and run semantics."""

import numpy as np
import pytest

import rdinverse as rd
from rdinverse import SpaceGrid, StructuralError, TimeGrid
from rdinverse.forward import ResidualPair, pde_residual
from rdinverse.grids import SpatialField
from rdinverse.lower import (
    LowerState,
    StepPolicy,
    dual_inner,
    linearized_apply,
    lower_adjoint,
    lower_run,
    residual_norm,
    state_inner,
    state_norm,
)
from rdinverse.stopping import FixedCount, ResidualThreshold

from conftest import interior_spacetime


def _random_pair(problem, rng):
    pde_vals = np.zeros((problem.time.n_t, problem.space.n_x))
    pde_vals[1:, 1:-1] = rng.standard_normal(pde_vals[1:, 1:-1].shape)
    init_vals = np.zeros(problem.space.n_x)
    init_vals[1:-1] = rng.standard_normal(problem.space.n_x - 2)
    return ResidualPair(
        rd.SpaceTimeField(pde_vals, problem.space, problem.time),
        SpatialField(init_vals, problem.space),
    )


def test_lower_adjoint_transposes_linearization(small_problem, small_truth, small_state):
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(5):
        h = interior_spacetime(small_problem, rng)
        pair = _random_pair(small_problem, rng)
        fh = linearized_apply(small_problem, small_truth, small_state, h)
        z = lower_adjoint(small_problem, small_truth, small_state, pair)
        lhs = dual_inner(small_problem, fh, pair)
        rhs = state_inner(small_problem, h, z)
        scale = residual_norm(small_problem, fh) * residual_norm(small_problem, pair)
        worst = max(worst, abs(lhs - rhs) / scale)
    assert worst < 1e-10


def test_linearized_apply_is_linear(small_problem, small_truth, small_state):
    rng = np.random.default_rng(3)
    h1 = interior_spacetime(small_problem, rng)
    h2 = interior_spacetime(small_problem, rng)
    combo = h1.with_values(2.5 * h1.values - 0.5 * h2.values)
    f1 = linearized_apply(small_problem, small_truth, small_state, h1)
    f2 = linearized_apply(small_problem, small_truth, small_state, h2)
    fc = linearized_apply(small_problem, small_truth, small_state, combo)
    expect_pde = 2.5 * f1.pde.values - 0.5 * f2.pde.values
    expect_init = 2.5 * f1.init.values - 0.5 * f2.init.values
    tol = 1e-10 * max(1.0, np.max(np.abs(expect_pde)))
    assert np.max(np.abs(fc.pde.values - expect_pde)) < tol
    assert np.max(np.abs(fc.init.values - expect_init)) < tol
    # structural zeros: time row 0 and the boundary columns
    assert np.all(fc.pde.values[0] == 0.0)
    assert np.all(fc.pde.values[:, 0] == 0.0)
    assert np.all(fc.pde.values[:, -1] == 0.0)


def test_metric_identities(small_problem):
    rng = np.random.default_rng(11)
    f1 = interior_spacetime(small_problem, rng)
    f2 = interior_spacetime(small_problem, rng)
    assert state_inner(small_problem, f1, f2) == pytest.approx(
        state_inner(small_problem, f2, f1), rel=1e-11
    )
    assert state_norm(small_problem, f1) ** 2 == pytest.approx(
        state_inner(small_problem, f1, f1), rel=1e-11
    )
    assert state_norm(small_problem, f1) > 0.0

    p1 = _random_pair(small_problem, rng)
    p2 = _random_pair(small_problem, rng)
    assert dual_inner(small_problem, p1, p2) == pytest.approx(
        dual_inner(small_problem, p2, p1), rel=1e-11
    )
    assert residual_norm(small_problem, p1) ** 2 == pytest.approx(
        dual_inner(small_problem, p1, p1), rel=1e-11
    )


def test_lower_run_fixed_count(small_problem, small_truth):
    u0 = rd.zeros_spacetime(small_problem.space, small_problem.time)
    state = lower_run(small_problem, small_truth, u0, FixedCount(7), StepPolicy())
    assert state.iterations_used == 7
    assert len(state.residual_history) == 8
    assert state.residual_norm == state.residual_history[-1]
    entry = residual_norm(small_problem, pde_residual(small_problem, small_truth, u0))
    assert state.residual_history[0] == pytest.approx(entry, rel=1e-12)


def test_lower_run_residual_decreases(small_problem, small_truth):
    u0 = rd.zeros_spacetime(small_problem.space, small_problem.time)
    state = lower_run(small_problem, small_truth, u0, FixedCount(25), StepPolicy())
    hist = state.residual_history
    assert all(hist[i + 1] <= hist[i] * (1 + 1e-12) for i in range(len(hist) - 1))
    assert hist[-1] < 0.5 * hist[0]


def test_lower_run_threshold_and_warm_start(small_problem, small_truth):
    u0 = rd.zeros_spacetime(small_problem.space, small_problem.time)
    rule = ResidualThreshold(1e-4)
    state = lower_run(small_problem, small_truth, u0, rule, StepPolicy())
    assert state.residual_norm <= 1e-4
    assert state.iterations_used > 0
    again = lower_run(small_problem, small_truth, state.u, rule, StepPolicy())
    assert again.iterations_used == 0
    assert again.residual_norm == pytest.approx(state.residual_norm, rel=1e-12)


def test_lower_run_rejects_mismatched_grids(small_problem, small_truth):
    stray = rd.zeros_spacetime(SpaceGrid(11), TimeGrid(5, 0.1))
    with pytest.raises(StructuralError):
        lower_run(small_problem, small_truth, stray, FixedCount(1))


def test_step_policy_override_and_caching(small_problem, small_truth, small_state):
    policy = StepPolicy(omega_override=0.125)
    assert policy.lower_omega(small_problem, small_truth, small_state, None) == 0.125
    cached = StepPolicy(power_iterations=3, cache_omega=True)
    pd = rd.derivative_curve(small_truth)
    first = cached.lower_omega(small_problem, small_truth, small_state, pd)
    second = cached.lower_omega(small_problem, small_truth, small_state, pd)
    assert first > 0.0
    assert second == first


def test_lower_state_validation(small_problem):
    u = rd.zeros_spacetime(small_problem.space, small_problem.time)
    with pytest.raises(StructuralError):
        LowerState(u, -1.0, 0)
    with pytest.raises(StructuralError):
        LowerState(u, 1.0, -2)
