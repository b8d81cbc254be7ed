"""The unknown reaction law as a sampled curve over the state range.

A reaction law is represented by its samples on a uniform grid covering the
range of state values the PDE visits.  Evaluation on a state field is linear
interpolation (clamped outside the covered range), differentiation is finite
differences at the sample nodes, and the H^s Riesz map is a Fourier
multiplier on the periodic extension of the range grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, StructuralError
from .grids import SpaceTimeField


@dataclass(frozen=True)
class RangeGrid:
    """Equidistant sample points for the represented range of u."""

    n_r: int
    u_min: float = -1.0
    u_max: float = 1.0

    def __post_init__(self):
        if self.n_r < 2:
            raise StructuralError(f"n_r must be >= 2, got {self.n_r}")
        if not self.u_max > self.u_min:
            raise StructuralError("u_max must exceed u_min")

    @property
    def h_r(self) -> float:
        return (self.u_max - self.u_min) / (self.n_r - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.u_min, self.u_max, self.n_r)

    @property
    def frequencies(self) -> np.ndarray:
        """Angular frequencies of the DFT on the grid's periodic extension.

        The grid is extended periodically with period n_r * h_r (one spacing
        past u_max), so mode k carries omega_k = 2*pi*k / (n_r * h_r), with
        the usual wrap-around to negative frequencies.
        """
        return 2.0 * np.pi * np.fft.fftfreq(self.n_r, d=self.h_r)


@dataclass(frozen=True)
class ReactionCurve:
    """A reaction law sampled on a RangeGrid."""

    samples: np.ndarray
    grid: RangeGrid

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if s.shape != (self.grid.n_r,):
            raise StructuralError(
                f"curve has {s.shape} samples for a grid of {self.grid.n_r} nodes"
            )
        if not np.all(np.isfinite(s)):
            raise StructuralError("curve samples contain non-finite entries")

    def with_samples(self, samples: np.ndarray) -> "ReactionCurve":
        return ReactionCurve(samples, self.grid)


@dataclass(frozen=True)
class SobolevSpec:
    """Sobolev exponent of the parameter space H^s.

    The smoothing step of the parameter update damps the k-th Fourier mode
    by (1 + omega_k^2)^(-s); exponents at or below 1 leave too much
    high-frequency freedom for the update to stay within the curve space,
    so the type admits only s > 1.
    """

    s: float = 1.5

    def __post_init__(self):
        if self.s <= 1.0:
            raise StructuralError("sobolev exponent must exceed 1")


def zero_curve(grid: RangeGrid) -> ReactionCurve:
    return ReactionCurve(np.zeros(grid.n_r), grid)


_BUILTIN_LAWS = {
    "fisher": lambda u: 4.0 * u * (1.0 - u),
    "lane_emden": lambda u: 2.0 * u / (1.0 + u + 4.0 * u**2),
    "zfk": lambda u: 4.0 * u * (1.0 - u) * np.exp(-2.0 * (1.0 - u)),
    "allen_cahn": lambda u: u * (1.0 - u) * (u - 0.5),
    "ginzburg_landau": lambda u: -u * np.abs(u) ** 2,
}

BUILTIN_REACTIONS = tuple(sorted(_BUILTIN_LAWS))


def builtin_reaction(name: str, grid: RangeGrid) -> ReactionCurve:
    """Sample one of the built-in reaction laws on a range grid.

    Known names: fisher, lane_emden, zfk, allen_cahn (well depth a = 0.5),
    ginzburg_landau (exponent p = 2).
    """
    try:
        law = _BUILTIN_LAWS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown reaction {name!r}; expected one of {sorted(_BUILTIN_LAWS)}",
            field="reaction",
        ) from None
    return ReactionCurve(law(grid.nodes), grid)


def interp_on(curve: ReactionCurve, values: np.ndarray) -> np.ndarray:
    """Linear interpolation of the curve at arbitrary arguments (array in,
    array out).  Arguments outside the range grid are clamped to the nearest
    endpoint, so the result is always bounded by the sample values."""
    return np.interp(values, curve.grid.nodes, curve.samples)


def interval_slopes(curve: ReactionCurve, values: np.ndarray) -> np.ndarray:
    """Exact derivative of the linear interpolant at the given arguments:
    the slope of the interval each argument falls in, and zero outside the
    grid (where the clamped interpolant is constant)."""
    g = curve.grid
    slopes = np.diff(curve.samples) / g.h_r
    idx = np.clip(((values - g.u_min) / g.h_r).astype(int), 0, g.n_r - 2)
    out = slopes[idx]
    out = np.where((values < g.u_min) | (values > g.u_max), 0.0, out)
    return out


def evaluate(curve: ReactionCurve, u: SpaceTimeField) -> SpaceTimeField:
    """Apply the reaction law pointwise to a state field."""
    return u.with_values(interp_on(curve, u.values))


def derivative_curve(curve: ReactionCurve) -> ReactionCurve:
    """Finite-difference derivative at the sample nodes.

    Central differences at interior nodes; second-order one-sided stencils
    at the two endpoints.
    """
    g = curve.grid
    if g.n_r < 3:
        raise StructuralError("derivative_curve needs at least 3 sample nodes")
    f = curve.samples
    h = g.h_r
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    d[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return ReactionCurve(d, g)


def sobolev_multipliers(grid: RangeGrid, spec: SobolevSpec) -> np.ndarray:
    """The (1 + omega_k^2)^(-s) Fourier multipliers of the H^s Riesz map."""
    return (1.0 + grid.frequencies**2) ** (-spec.s)


def sobolev_riesz(raw: ReactionCurve, spec: SobolevSpec) -> ReactionCurve:
    """Apply the H^s Riesz map: damp each DFT mode by (1 + omega^2)^(-s)."""
    mult = sobolev_multipliers(raw.grid, spec)
    smoothed = np.fft.ifft(mult * np.fft.fft(raw.samples)).real
    return raw.with_samples(smoothed)


def hs_inner(c1: ReactionCurve, c2: ReactionCurve, spec: SobolevSpec) -> float:
    """Discrete H^s inner product on the periodic extension of the range grid.

    At s = 0 this reduces (by Parseval) to the uniform-weight L2 inner
    product h_r * sum(c1 * c2).
    """
    if c1.grid != c2.grid:
        raise StructuralError("H^s inner product needs matching range grids")
    g = c1.grid
    weights = (1.0 + g.frequencies**2) ** spec.s
    spec1 = np.fft.fft(c1.samples)
    spec2 = np.fft.fft(c2.samples)
    return float((g.h_r / g.n_r) * np.real(np.sum(weights * spec1 * np.conj(spec2))))


def hs_norm(curve: ReactionCurve, spec: SobolevSpec) -> float:
    return float(np.sqrt(max(hs_inner(curve, curve, spec), 0.0)))


def l2_range_norm(curve: ReactionCurve) -> float:
    """Uniform-weight L2 norm of the samples (the norm used for reported
    reaction errors)."""
    return float(np.sqrt(curve.grid.h_r * np.sum(curve.samples**2)))


def curve_to_json(curve: ReactionCurve) -> list:
    """Serialize as a list of {u, value} pairs."""
    return [
        {"u": float(u), "value": float(v)}
        for u, v in zip(curve.grid.nodes, curve.samples)
    ]


def curve_from_json(entries: list) -> ReactionCurve:
    if len(entries) < 2:
        raise ConfigurationError("curve file needs at least 2 sample points")
    us = np.array([e["u"] for e in entries], dtype=float)
    vals = np.array([e["value"] for e in entries], dtype=float)
    spacings = np.diff(us)
    if np.any(spacings <= 0) or not np.allclose(spacings, spacings[0], rtol=1e-8):
        raise ConfigurationError("curve sample points must be equidistant increasing")
    grid = RangeGrid(len(us), float(us[0]), float(us[-1]))
    return ReactionCurve(vals, grid)
