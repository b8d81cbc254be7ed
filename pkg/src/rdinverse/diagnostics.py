"""Numerical verification instruments.

Four independent checks of the inversion machinery:

* ``adjoint_test``   — the lower-level adjoint is an exact transpose, so the
  duality mismatch must sit at round-off (tolerance 1e-10).
* ``gradient_check`` — central finite differences of the data misfit against
  the assembled H^s gradient (tolerance 1e-2 on the median best-tau error;
  the residual gap is interpolation bias, not transposition error).
* ``tcc_ratio``      — Monte-Carlo bound on the linearization error of the
  parameter-to-state map relative to the output difference; ratios below 1
  are the regime in which gradient-type iterations are known to converge.
* ``fit_rate_slope`` — least-squares slope of log residual vs log iteration,
  for checking algebraic decay rates of lower-level runs.

Every instrument is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import StructuralError
from .forward import (
    Observation,
    PdeProblem,
    ResidualPair,
    implicit_solve,
    linearized_reference_solve,
    misfit_norm,
    reference_solve,
)
from .grids import SpaceTimeField, SpatialField, norm_l2_space, norm_l2_spacetime
from .lower import (
    StepPolicy,
    dual_inner,
    linearized_apply,
    lower_adjoint,
    lower_run,
    residual_norm,
    state_inner,
)
from .reactions import (
    RangeGrid,
    ReactionCurve,
    SobolevSpec,
    derivative_curve,
    hs_inner,
    hs_norm,
)
from .stopping import ResidualThreshold
from .upper import upper_gradient


@dataclass(frozen=True)
class DiagnosticReport:
    """Outcome of one verification instrument.

    ``samples`` holds (input descriptor, measured value) pairs; ``worst`` is
    their maximum.  ``passed`` applies the instrument's own decision rule
    (worst < tolerance, except the gradient check which gates on ``median``).
    """

    name: str
    tolerance: float
    samples: tuple
    worst: float
    passed: bool
    median: Optional[float] = None

    def __post_init__(self):
        if self.samples:
            top = max(v for _, v in self.samples)
            if not math.isclose(top, self.worst, rel_tol=1e-12, abs_tol=0.0):
                raise StructuralError("worst must be the maximum sampled value")

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "tolerance": self.tolerance,
            "worst": self.worst,
            "pass": self.passed,
            "samples": [{"input": d, "value": v} for d, v in self.samples],
        }
        if self.median is not None:
            out["median"] = self.median
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def band_limited_curve(
    grid: RangeGrid,
    spec: SobolevSpec,
    rng: np.random.Generator,
    modes: int = 3,
) -> ReactionCurve:
    """A smooth random curve of unit H^s norm (low-frequency Fourier modes
    with Hermitian-symmetric coefficients, so the samples are real)."""
    n = grid.n_r
    coef = np.zeros(n, dtype=complex)
    coef[0] = rng.standard_normal()
    kmax = min(modes, n // 2 - 1)
    for k in range(1, kmax + 1):
        c = rng.standard_normal() + 1j * rng.standard_normal()
        coef[k] = c
        coef[n - k] = np.conj(c)
    curve = ReactionCurve(np.fft.ifft(coef).real, grid)
    nrm = hs_norm(curve, spec)
    if nrm <= 0:
        raise StructuralError("degenerate random curve draw")
    return curve.with_samples(curve.samples / nrm)


# ---------------------------------------------------------------------------
# adjoint exactness
# ---------------------------------------------------------------------------


def adjoint_test(
    problem: PdeProblem,
    curve: ReactionCurve,
    u: SpaceTimeField,
    trials: int = 20,
    seed: int = 0,
) -> DiagnosticReport:
    """Duality check <F'(u) h, pair> = <h, F'(u)* pair> on random draws.

    Directions and residual pairs are drawn with the structural zeros of the
    residual space (row 0 of the PDE component, boundary columns); the
    mismatch is normalized by ||F'(u) h|| * ||pair||.
    """
    if trials < 1:
        raise StructuralError("adjoint_test needs at least one trial")
    pd_curve = derivative_curve(curve)
    rng = np.random.default_rng(seed)
    nt, nx = problem.time.n_t, problem.space.n_x
    samples = []
    for i in range(trials):
        hv = np.zeros((nt, nx))
        hv[:, 1:-1] = rng.standard_normal((nt, nx - 2))
        h_dir = SpaceTimeField(hv, u.space, u.time)

        rv = np.zeros((nt, nx))
        rv[1:, 1:-1] = rng.standard_normal((nt - 1, nx - 2))
        gv = np.zeros(nx)
        gv[1:-1] = rng.standard_normal(nx - 2)
        pair = ResidualPair(
            SpaceTimeField(rv, u.space, u.time), SpatialField(gv, problem.space)
        )

        fh = linearized_apply(problem, curve, u, h_dir, pd_curve)
        z = lower_adjoint(problem, curve, u, pair, pd_curve)
        lhs = dual_inner(problem, fh, pair)
        rhs = state_inner(problem, h_dir, z)
        denom = max(residual_norm(problem, fh) * residual_norm(problem, pair), 1e-300)
        samples.append((f"trial{i}", abs(lhs - rhs) / denom))
    worst = max(v for _, v in samples)
    return DiagnosticReport("adjoint_test", 1e-10, tuple(samples), worst, worst < 1e-10)


# ---------------------------------------------------------------------------
# gradient fidelity
# ---------------------------------------------------------------------------


def _tight_state(problem, curve, tol):
    """Bi-level misfit evaluation state: a lower run under a tight residual
    threshold, warm-started at the time-marching solution so the threshold
    is met on entry."""
    warm = implicit_solve(problem, curve)
    return lower_run(problem, curve, warm, ResidualThreshold(tol), StepPolicy())


def gradient_check(
    problem: PdeProblem,
    curve: ReactionCurve,
    obs: Observation,
    directions: int = 5,
    tau_list: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
    seed: int = 0,
    sobolev: Optional[SobolevSpec] = None,
    lower_tol: float = 1e-10,
) -> DiagnosticReport:
    """Central-difference check of the assembled H^s misfit gradient.

    For each random smooth direction xi, compares (J(c + tau xi) -
    J(c - tau xi)) / (2 tau) with <grad, xi>_X across the taus; the report
    passes iff the median (over directions) of the best-tau relative errors
    is below 1e-2.  ``samples`` records every (direction, tau) error, so the
    truncation/cancellation trade-off is visible in the report.
    """
    if directions < 1 or len(tau_list) < 1:
        raise StructuralError("gradient_check needs directions and a tau list")
    if sobolev is None:
        sobolev = SobolevSpec()
    grid = curve.grid
    state0 = _tight_state(problem, curve, lower_tol)
    grad = upper_gradient(problem, curve, state0, obs, sobolev, grid)
    rng = np.random.default_rng(seed)

    def j_at(c):
        return 0.5 * misfit_norm(_tight_state(problem, c, lower_tol).u, obs) ** 2

    samples = []
    best_errors = []
    for i in range(directions):
        xi = band_limited_curve(grid, sobolev, rng)
        pred = hs_inner(grad, xi, sobolev)
        denom = max(abs(pred), 1e-300)
        errs = []
        for tau in tau_list:
            cp = curve.with_samples(curve.samples + tau * xi.samples)
            cm = curve.with_samples(curve.samples - tau * xi.samples)
            fd = (j_at(cp) - j_at(cm)) / (2.0 * tau)
            err = abs(fd - pred) / denom
            errs.append(err)
            samples.append((f"dir{i},tau={tau:g}", err))
        best_errors.append(min(errs))
    worst = max(v for _, v in samples)
    med = float(np.median(best_errors))
    return DiagnosticReport(
        "gradient_check", 1e-2, tuple(samples), worst, med < 1e-2, median=med
    )


# ---------------------------------------------------------------------------
# tangential cone ratio
# ---------------------------------------------------------------------------


def tcc_ratio(
    problem: PdeProblem,
    truth: ReactionCurve,
    radius: float,
    samples: int = 20,
    seed: int = 0,
    sobolev: Optional[SobolevSpec] = None,
    mode: str = "full",
) -> DiagnosticReport:
    """Sampled linearization-error-to-output-difference ratios around truth.

    Draws curves within H^s distance ``radius`` of ``truth`` and measures
    ||S(c) - S(truth) - S'(c)(c - truth)|| / ||S(c) - S(truth)|| with the
    high-accuracy marching solver and its exact linearization.  A ratio is
    defined as 0 when both norms are below 1e-12.  Passes iff all ratios are
    below 1.  ``mode`` selects the output norm: the whole trajectory or the
    final-time slice.
    """
    if radius <= 0:
        raise StructuralError("tcc_ratio needs a positive radius")
    if samples < 1:
        raise StructuralError("tcc_ratio needs at least one sample")
    if mode not in ("full", "terminal"):
        raise StructuralError(f"unknown observation mode {mode!r}")
    if sobolev is None:
        sobolev = SobolevSpec()
    base = reference_solve(problem, truth)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(samples):
        unit = band_limited_curve(truth.grid, sobolev, rng)
        scale = radius * rng.uniform(0.25, 1.0)
        xi = unit.with_samples(unit.samples * scale)
        pert = truth.with_samples(truth.samples + xi.samples)
        u_pert = reference_solve(problem, pert)
        lin = linearized_reference_solve(problem, pert, u_pert, xi)
        if mode == "full":
            num = norm_l2_spacetime(
                SpaceTimeField(
                    u_pert.values - base.values - lin.values, base.space, base.time
                )
            )
            den = norm_l2_spacetime(
                SpaceTimeField(u_pert.values - base.values, base.space, base.time)
            )
        else:
            num = norm_l2_space(
                SpatialField(
                    u_pert.values[-1] - base.values[-1] - lin.values[-1], base.space
                )
            )
            den = norm_l2_space(
                SpatialField(u_pert.values[-1] - base.values[-1], base.space)
            )
        ratio = 0.0 if (num < 1e-12 and den < 1e-12) else num / den
        entries.append((f"sample{i},norm={scale:.3g}", ratio))
    worst = max(v for _, v in entries)
    return DiagnosticReport("tcc_ratio", 1.0, tuple(entries), worst, worst < 1.0)


# ---------------------------------------------------------------------------
# decay-rate fitting
# ---------------------------------------------------------------------------


def fit_rate_slope(history: Sequence[float], k_lo: int, k_hi: int) -> float:
    """Least-squares slope of log residual vs log iteration index over the
    window k_lo..k_hi (inclusive; truncated to the available history)."""
    if not (k_hi > k_lo >= 1):
        raise StructuralError("rate window must satisfy k_hi > k_lo >= 1")
    top = min(k_hi, len(history) - 1)
    ks = np.arange(k_lo, top + 1)
    if ks.size < 3:
        raise StructuralError("rate fit needs at least 3 points in the window")
    vals = np.asarray([history[k] for k in ks], dtype=float)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise StructuralError("residual history must be positive and finite on the window")
    slope = np.polyfit(np.log(ks.astype(float)), np.log(vals), 1)[0]
    return float(slope)
