"""Closed-form moments in the two degenerate regimes.

Drift-only (delta2 = beta2 = 0): no mean uncertainty, the second moment is
driven by the extreme variances. Quadratic-variation-only (delta1 = beta1 = 0):
piecewise mean with a kink at delta2/beta2. In the latter regime the formulas are
attained by the best constant volatility; they coincide with the sublinear
expectation only when sigma = 0 (diffusion smooths the convex kink otherwise).

Terms are written with expm1 so that every formula returns phi(x) exactly at t = t'.
"""
from __future__ import annotations

import math
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import CirParams, GFunction, Regime
from .errors import DomainError, RegimeError


class MomentQuery(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    params: CirParams
    t: float = Field(0.0, ge=0.0)
    t_prime: float = Field(..., ge=0.0)
    x: float = Field(..., ge=0.0)
    regime: Optional[Regime] = Field(None, description="regime override; zeroes the switched-off fields")

    @model_validator(mode="after")
    def _check_horizon(self) -> "MomentQuery":
        if self.t_prime < self.t:
            raise ValueError("t_prime must not precede t")
        return self

    @property
    def horizon(self) -> float:
        return self.t_prime - self.t


def _params_for(q: MomentQuery, regime: Regime) -> CirParams:
    flagged = q.regime or q.params.regime
    if flagged is not regime:
        raise RegimeError(f"query is not flagged for regime {regime.value} (got {flagged.value})")
    p = q.params
    if regime is Regime.DRIFT_ONLY and p.beta1 == 0.0:
        raise DomainError("beta1 must be non-zero in the drift-only regime")
    if regime is Regime.QV_ONLY and p.beta2 == 0.0:
        raise DomainError("beta2 must be non-zero in the quadratic-variation regime")
    return p if p.regime is regime else p.force_regime(regime)


def mean_drift_case(q: MomentQuery) -> float:
    p = _params_for(q, Regime.DRIFT_ONLY)
    level = p.delta1 / p.beta1
    return q.x + (q.x - level) * math.expm1(-p.beta1 * q.horizon)


def second_moment_drift_case(q: MomentQuery, a_sq: float) -> float:
    """Second moment under variance a_sq: a_sq = hi gives the upper moment, lo the lower."""
    if a_sq < 0.0:
        raise DomainError("a_sq must be non-negative")
    p = _params_for(q, Regime.DRIFT_ONLY)
    b, x = p.beta1, q.x
    level = p.delta1 / b
    noise = p.sigma**2 * a_sq
    e1 = math.expm1(-b * q.horizon)
    e2 = math.expm1(-2.0 * b * q.horizon)
    return (
        x * x
        + e1 * (noise + 2.0 * p.delta1) / b * (x - level)
        + e2 * ((x - level) ** 2 + noise / (2.0 * b) * (level - 2.0 * x))
    )


def variance_drift_case(q: MomentQuery, gf: GFunction) -> Tuple[float, float]:
    """(lower, upper) variance; the mean carries no uncertainty in this regime."""
    mean = mean_drift_case(q)
    upper = second_moment_drift_case(q, gf.sigma_hi_sq) - mean * mean
    lower = second_moment_drift_case(q, gf.sigma_lo_sq) - mean * mean
    return max(lower, 0.0), max(upper, 0.0)


def _kinked_mean(q: MomentQuery, below_sq: float, above_sq: float) -> float:
    p = _params_for(q, Regime.QV_ONLY)
    kink = p.delta2 / p.beta2
    rate_sq = below_sq if q.x <= kink else above_sq
    return q.x + (q.x - kink) * math.expm1(-rate_sq * p.beta2 * q.horizon)


def mean_upper_qv_case(q: MomentQuery, gf: GFunction) -> float:
    return _kinked_mean(q, gf.sigma_hi_sq, gf.sigma_lo_sq)


def mean_lower_qv_case(q: MomentQuery, gf: GFunction) -> float:
    """-E[-X], i.e. the negated value of the mirrored piecewise formula."""
    return _kinked_mean(q, gf.sigma_lo_sq, gf.sigma_hi_sq)


def oracle_for(regime: Regime, payoff_kind: str, q: MomentQuery, gf: GFunction) -> Optional[float]:
    """Closed-form value of E[phi] for the payoffs the formulas cover, else None.

    Negated payoffs return E[-X] (resp. E[-X^2]) so the value is comparable with
    the PDE solution of the same payoff.
    """
    if regime is Regime.DRIFT_ONLY:
        if payoff_kind == "identity":
            return mean_drift_case(q)
        if payoff_kind == "negate":
            return -mean_drift_case(q)
        if payoff_kind == "square":
            return second_moment_drift_case(q, gf.sigma_hi_sq)
        if payoff_kind == "neg_square":
            return -second_moment_drift_case(q, gf.sigma_lo_sq)
    if regime is Regime.QV_ONLY:
        if payoff_kind == "identity":
            return mean_upper_qv_case(q, gf)
        if payoff_kind == "negate":
            return -mean_lower_qv_case(q, gf)
    return None
