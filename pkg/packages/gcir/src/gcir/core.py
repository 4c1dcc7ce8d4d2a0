from __future__ import annotations

import math
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DomainError


class GFunction(BaseModel):
    """Sublinear generator G(a) = 1/2 (hi*a^+ - lo*a^-) on the variance band [lo, hi]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_lo_sq: float = Field(..., ge=0.0, description="Lower variance bound")
    sigma_hi_sq: float = Field(..., gt=0.0, description="Upper variance bound")
    allow_degenerate: bool = Field(False, description="Admit lo == hi (a single prior)")

    @model_validator(mode="after")
    def _check_band(self) -> "GFunction":
        if self.sigma_lo_sq > self.sigma_hi_sq:
            raise ValueError("sigma_lo_sq must not exceed sigma_hi_sq")
        if self.sigma_lo_sq == self.sigma_hi_sq and not self.allow_degenerate:
            raise ValueError("variance band must be non-degenerate (sigma_lo_sq < sigma_hi_sq)")
        return self

    @classmethod
    def degenerate(cls, s: float) -> "GFunction":
        return cls(sigma_lo_sq=s, sigma_hi_sq=s, allow_degenerate=True)

    @property
    def sigma_lo(self) -> float:
        return math.sqrt(self.sigma_lo_sq)

    @property
    def sigma_hi(self) -> float:
        return math.sqrt(self.sigma_hi_sq)

    @property
    def is_degenerate(self) -> bool:
        return self.sigma_lo_sq == self.sigma_hi_sq


class Regime(str, Enum):
    FULL = "full"
    DRIFT_ONLY = "drift_only"  # delta2 = beta2 = 0
    QV_ONLY = "qv_only"  # delta1 = beta1 = 0


_ZEROED = {
    Regime.FULL: (),
    Regime.DRIFT_ONLY: ("delta2", "beta2"),
    Regime.QV_ONLY: ("delta1", "beta1"),
}


class CirParams(BaseModel):
    """Constants of dX = (d1 - b1 X)dt + (d2 - b2 X)d<B> + sigma sqrt(X) dB.

    The Hoelder constant of x -> sigma*sqrt(x) is sigma itself.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    delta1: float = Field(..., ge=0.0, description="dt-drift level")
    delta2: float = Field(..., ge=0.0, description="d<B>-drift level")
    beta1: float = Field(..., ge=0.0, description="dt mean reversion")
    beta2: float = Field(..., ge=0.0, description="d<B> mean reversion")
    sigma: float = Field(..., ge=0.0, description="diffusion scale")
    regime: Regime = Field(Regime.FULL, description="which coefficient pair is switched off")

    @model_validator(mode="after")
    def _check_regime(self) -> "CirParams":
        zeroed = _ZEROED[self.regime]
        for name in ("delta1", "delta2", "beta1", "beta2"):
            value = getattr(self, name)
            if name in zeroed and value != 0.0:
                raise ValueError(f"{name} must be 0 in regime {self.regime.value}")
            if name not in zeroed and value <= 0.0:
                raise ValueError(f"{name} must be positive in regime {self.regime.value}")
        return self

    @property
    def hoelder_constant(self) -> float:
        return self.sigma

    def force_regime(self, regime: Regime) -> "CirParams":
        """Copy with the fields switched off by `regime` set to zero."""
        data = self.model_dump()
        data["regime"] = regime
        for name in _ZEROED[regime]:
            data[name] = 0.0
        return CirParams(**data)

    def drift_dt(self, x: np.ndarray | float) -> np.ndarray | float:
        return self.delta1 - self.beta1 * x

    def drift_qv(self, x: np.ndarray | float) -> np.ndarray | float:
        return self.delta2 - self.beta2 * x


class GeneralFormCoeffs(BaseModel):
    """Coefficients in the form dX = (2*b1~ X + d1)dt + (2*b2~ X + d2)d<B> + sigma(X)dB."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    beta1_tilde: float = Field(..., le=0.0)
    beta2_tilde: float = Field(..., le=0.0)
    delta1: float
    delta2: float
    sigma: float = Field(..., ge=0.0)
    regime: Regime = Regime.FULL


def to_general_form(p: CirParams) -> GeneralFormCoeffs:
    return GeneralFormCoeffs(
        beta1_tilde=-p.beta1 / 2.0,
        beta2_tilde=-p.beta2 / 2.0,
        delta1=p.delta1,
        delta2=p.delta2,
        sigma=p.sigma,
        regime=p.regime,
    )


def from_general_form(c: GeneralFormCoeffs) -> CirParams:
    # halving and doubling are exact in binary floating point
    return CirParams(
        delta1=c.delta1,
        delta2=c.delta2,
        beta1=-2.0 * c.beta1_tilde + 0.0,
        beta2=-2.0 * c.beta2_tilde + 0.0,
        sigma=c.sigma,
        regime=c.regime,
    )


def g_eval(gf: GFunction, a: float) -> float:
    return 0.5 * (gf.sigma_hi_sq * max(a, 0.0) - gf.sigma_lo_sq * max(-a, 0.0))


def g_argmax(gf: GFunction, a: float) -> float:
    """Maximizing q of q*a over [lo, hi]; a == 0 resolves to hi."""
    return gf.sigma_lo_sq if a < 0.0 else gf.sigma_hi_sq


class PayoffKind(str, Enum):
    IDENTITY = "identity"
    NEGATE = "negate"
    SQUARE = "square"
    NEG_SQUARE = "neg_square"
    SMOOTHED_INDICATOR = "smoothed_indicator"
    CLIPPED_LINEAR = "clipped_linear"
    CUSTOM = "custom"
    CONSTANT = "constant"


_MIRROR = {
    PayoffKind.IDENTITY: PayoffKind.NEGATE,
    PayoffKind.NEGATE: PayoffKind.IDENTITY,
    PayoffKind.SQUARE: PayoffKind.NEG_SQUARE,
    PayoffKind.NEG_SQUARE: PayoffKind.SQUARE,
}


class Payoff(BaseModel):
    """Terminal function phi.

    Identity/Square and their negations are unbounded on [0, inf); callers bound
    them through `domain_cap` (the PDE truncation x_max).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PayoffKind
    a: Optional[float] = Field(None, description="indicator threshold")
    w: float = Field(0.05, gt=0.0, description="indicator ramp width")
    lo: Optional[float] = None
    hi: Optional[float] = None
    xs: Optional[Tuple[float, ...]] = Field(None, description="tabulated abscissae (custom)")
    ys: Optional[Tuple[float, ...]] = Field(None, description="tabulated values (custom)")
    value: float = Field(0.0, description="level of a constant payoff")
    sign: float = Field(1.0, description="+1 or -1; negation of kinds without a mirror")
    domain_cap: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _check_kind(self) -> "Payoff":
        if self.sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")
        if self.kind is PayoffKind.SMOOTHED_INDICATOR and self.a is None:
            raise ValueError("smoothed_indicator needs a threshold 'a'")
        if self.kind is PayoffKind.CLIPPED_LINEAR:
            if self.lo is None or self.hi is None or self.lo > self.hi:
                raise ValueError("clipped_linear needs lo <= hi")
        if self.kind is PayoffKind.CUSTOM:
            if not self.xs or not self.ys or len(self.xs) != len(self.ys) or len(self.xs) < 2:
                raise ValueError("custom payoff needs matching xs/ys with at least two points")
            if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
                raise ValueError("custom xs must be strictly ascending")
        return self

    @classmethod
    def identity(cls) -> "Payoff":
        return cls(kind=PayoffKind.IDENTITY)

    @classmethod
    def square(cls) -> "Payoff":
        return cls(kind=PayoffKind.SQUARE)

    @classmethod
    def constant(cls, c: float) -> "Payoff":
        return cls(kind=PayoffKind.CONSTANT, value=c)

    @classmethod
    def smoothed_indicator(cls, a: float, w: float = 0.05) -> "Payoff":
        return cls(kind=PayoffKind.SMOOTHED_INDICATOR, a=a, w=w)

    def negate(self) -> "Payoff":
        if self.kind in _MIRROR:
            return self.model_copy(update={"kind": _MIRROR[self.kind]})
        return self.model_copy(update={"sign": -self.sign})

    @property
    def lipschitz_bound(self) -> float:
        kind = self.kind
        if kind in (PayoffKind.IDENTITY, PayoffKind.NEGATE):
            return 1.0
        if kind in (PayoffKind.SQUARE, PayoffKind.NEG_SQUARE):
            return 2.0 * self.domain_cap if self.domain_cap is not None else math.inf
        if kind is PayoffKind.SMOOTHED_INDICATOR:
            return 1.0 / self.w
        if kind is PayoffKind.CLIPPED_LINEAR:
            return 0.0 if self.lo == self.hi else 1.0
        if kind is PayoffKind.CUSTOM:
            xs = np.asarray(self.xs)
            ys = np.asarray(self.ys)
            return float(np.max(np.abs(np.diff(ys) / np.diff(xs))))
        return 0.0

    def values(self, x: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on the real line (Euler iterates may be negative)."""
        x = np.asarray(x, dtype=float)
        kind = self.kind
        if kind is PayoffKind.IDENTITY:
            out = x.copy()
        elif kind is PayoffKind.NEGATE:
            out = -x
        elif kind is PayoffKind.SQUARE:
            out = x * x
        elif kind is PayoffKind.NEG_SQUARE:
            out = -(x * x)
        elif kind is PayoffKind.SMOOTHED_INDICATOR:
            out = np.clip((self.a + self.w - x) / self.w, 0.0, 1.0)
        elif kind is PayoffKind.CLIPPED_LINEAR:
            out = np.clip(x, self.lo, self.hi)
        elif kind is PayoffKind.CUSTOM:
            out = np.interp(x, np.asarray(self.xs), np.asarray(self.ys))
        else:
            out = np.full_like(x, self.value)
        return self.sign * out if self.sign != 1.0 else out


def payoff_eval(phi: Payoff, x: float) -> float:
    if not x >= 0.0:
        raise DomainError(f"payoff argument must be >= 0, got {x}")
    return float(phi.values(np.asarray([x]))[0])
