"""Termination policies for the two iteration levels.

Rules are small frozen dataclasses forming a tagged union; the two predicate
functions dispatch on the tag.  Lower-level rules see the iteration count,
the current residual, the upper index j, and the previous upper misfit;
upper-level rules see the upper index and the current data misfit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .errors import ConfigurationError


@dataclass(frozen=True)
class FixedCount:
    """Stop after a fixed number of iterations."""

    k_max: int

    def __post_init__(self):
        if self.k_max < 1:
            raise ConfigurationError("k_max must be >= 1", field="rule.k_max")


@dataclass(frozen=True)
class ResidualThreshold:
    """Stop once the residual norm drops to the tolerance."""

    tol: float

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive", field="rule.tol")


@dataclass(frozen=True)
class NoiseCoupled:
    """Stop the lower level once residual <= delta / q**j.

    With q > 1 the thresholds tighten geometrically in the upper index,
    giving a summable schedule of state errors.
    """

    delta: float
    q: float = 2.0

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigurationError("delta must be nonnegative", field="rule.delta")
        if self.q < 1:
            raise ConfigurationError("q must be >= 1", field="rule.q")


@dataclass(frozen=True)
class Posterior:
    """Stop the lower level once c_pos * residual <= previous upper misfit."""

    c_pos: float = 1.0

    def __post_init__(self):
        if not self.c_pos > 0:
            raise ConfigurationError("c_pos must be positive", field="rule.c_pos")


@dataclass(frozen=True)
class Discrepancy:
    """Upper-level discrepancy principle: stop once misfit <= tau*delta*||y||."""

    tau: float = 1.5
    delta: float = 0.0

    def __post_init__(self):
        if not self.tau > 1:
            raise ConfigurationError("tau must exceed 1", field="rule.tau")
        if self.delta < 0:
            raise ConfigurationError("delta must be nonnegative", field="rule.delta")


StoppingRule = Union[FixedCount, ResidualThreshold, NoiseCoupled, Posterior, Discrepancy]


def lower_should_stop(
    rule: StoppingRule,
    k: int,
    residual: float,
    j: int = 0,
    prev_misfit: float = math.inf,
) -> bool:
    """Decide whether a lower-level run terminates at iterate k.

    The PDE residual norm stands in for the (unobservable) state
    approximation error in the noise-coupled and posterior rules.
    """
    if isinstance(rule, FixedCount):
        return k >= rule.k_max
    if isinstance(rule, ResidualThreshold):
        return residual <= rule.tol
    if isinstance(rule, NoiseCoupled):
        return residual <= rule.delta / rule.q**j
    if isinstance(rule, Posterior):
        return rule.c_pos * residual <= prev_misfit
    raise ConfigurationError(
        f"{type(rule).__name__} is not a lower-level rule", field="lower_rule"
    )


def upper_should_stop(rule: StoppingRule, j: int, misfit: float, y_norm: float) -> bool:
    """Decide whether the upper-level iteration terminates at index j."""
    if isinstance(rule, FixedCount):
        return j >= rule.k_max
    if isinstance(rule, Discrepancy):
        return misfit <= rule.tau * rule.delta * y_norm
    raise ConfigurationError(
        f"{type(rule).__name__} is not an upper-level rule", field="upper_rule"
    )
