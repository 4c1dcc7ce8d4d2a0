"""Euler polygonal approximation under explicit volatility controls.

A control theta_t in [sigma_lo, sigma_hi] picks one prior: d<B>_t = theta_t^2 dt and
dB_t = theta_t dW_t. One step from the left endpoint t_k reads

    X_{k+1} = X_k + (d1 - b1 X_k) h + (d2 - b2 X_k) theta_k^2 h + s~(X_k) theta_k sqrt(h) xi_k

with s~(x) = sigma*sqrt(x) for x >= 0 and 0 below. Iterates may dip below zero.
The upper expectation is approximated by maximizing over constant controls or by the
state-dependent control read off the PDE solution.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import CirParams, GFunction, Payoff
from .errors import DomainError, NonFiniteError
from .events import log_event
from .pde_solver import PdeSolution
from .streams import MAX_SEED, block_normals, blocks_for, map_blocks

# observer(step, x_before, theta, diffusion_increment)
StepObserver = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]


class ControlField:
    """Maximizing variance q*[level, node] on a PDE grid."""

    __slots__ = ("times", "nodes", "q")

    def __init__(self, times: np.ndarray, nodes: np.ndarray, q: np.ndarray) -> None:
        self.times = np.asarray(times, dtype=float)
        self.nodes = np.asarray(nodes, dtype=float)
        self.q = np.asarray(q, dtype=float)
        if self.q.shape != (len(self.times), len(self.nodes)):
            raise DomainError("control field must be shaped (levels, nodes)")

    @classmethod
    def constant(cls, times: np.ndarray, nodes: np.ndarray, q: float) -> "ControlField":
        return cls(times, nodes, np.full((len(times), len(nodes)), q))

    @classmethod
    def from_solution(cls, sol: PdeSolution) -> "ControlField":
        return cls(times=sol.times, nodes=sol.grid.nodes, q=sol.controls)

    def theta(self, t: float, x: np.ndarray) -> np.ndarray:
        level = int(np.abs(self.times - t).argmin())
        dx = self.nodes[1] - self.nodes[0]
        # states outside the grid are clamped to the boundary node
        node = np.clip(np.rint(x / dx), 0, len(self.nodes) - 1).astype(np.int64)
        return np.sqrt(self.q[level, node])


class ControlKind(str, Enum):
    CONSTANT = "constant"
    PIECEWISE_CONSTANT = "piecewise_constant"
    BANG_BANG = "bang_bang"


class VolatilityControl(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    kind: ControlKind
    theta: Optional[float] = Field(None, ge=0.0)
    breakpoints: Tuple[float, ...] = ()
    thetas: Tuple[float, ...] = ()
    field: Optional[ControlField] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "VolatilityControl":
        if self.kind is ControlKind.CONSTANT and self.theta is None:
            raise ValueError("constant control needs theta")
        if self.kind is ControlKind.PIECEWISE_CONSTANT:
            if len(self.thetas) != len(self.breakpoints) + 1:
                raise ValueError("piecewise control needs len(thetas) == len(breakpoints) + 1")
            if any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
                raise ValueError("breakpoints must be strictly ascending")
        if self.kind is ControlKind.BANG_BANG and self.field is None:
            raise ValueError("bang_bang control needs a control field")
        return self

    @classmethod
    def constant(cls, theta: float) -> "VolatilityControl":
        return cls(kind=ControlKind.CONSTANT, theta=theta)

    @classmethod
    def bang_bang(cls, field: ControlField) -> "VolatilityControl":
        return cls(kind=ControlKind.BANG_BANG, field=field)

    def check_band(self, gf: GFunction) -> None:
        if self.kind is ControlKind.CONSTANT:
            values = [self.theta]
        elif self.kind is ControlKind.PIECEWISE_CONSTANT:
            values = list(self.thetas)
        else:
            values = list(np.sqrt(np.unique(self.field.q)))
        for v in values:
            if not (gf.sigma_lo <= v <= gf.sigma_hi):
                raise DomainError(f"control value {v} outside [{gf.sigma_lo}, {gf.sigma_hi}]")

    def theta_at(self, t: float, x: np.ndarray) -> np.ndarray:
        """Control at the left endpoint t for states x."""
        if self.kind is ControlKind.CONSTANT:
            return np.full(x.shape, self.theta)
        if self.kind is ControlKind.PIECEWISE_CONSTANT:
            idx = int(np.searchsorted(np.asarray(self.breakpoints), t, side="right"))
            return np.full(x.shape, self.thetas[idx])
        return self.field.theta(t, x)


class EulerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_steps: int = Field(..., ge=1)
    n_paths: int = Field(..., ge=1)
    seed: int = Field(..., ge=0, le=MAX_SEED)
    full_truncation: bool = Field(False, description="also truncate the drift at X^+")

    def mesh(self, t: float, t_prime: float) -> float:
        return (t_prime - t) / self.n_steps


@dataclass(frozen=True)
class PathEnsemble:
    config: EulerConfig
    control: VolatilityControl
    terminal_values: np.ndarray
    min_values: np.ndarray


class McEstimate(BaseModel):
    value: float
    std_error: float = Field(..., ge=0.0)
    n_paths: int
    theta_star: Optional[float] = None


def sigma_tilde(params: CirParams, x: np.ndarray) -> np.ndarray:
    """sigma*sqrt(x) on x >= 0, exactly 0 below."""
    return params.sigma * np.sqrt(np.maximum(x, 0.0))


def euler_step(
    params: CirParams,
    x: np.ndarray,
    theta: np.ndarray,
    h: float,
    dw: np.ndarray,
    full_truncation: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """One polygonal step driven by the Wiener increment dw; returns (x_next, diffusion increment)."""
    xd = np.maximum(x, 0.0) if full_truncation else x
    noise = sigma_tilde(params, x) * theta * dw
    drift = params.drift_dt(xd) + theta * theta * params.drift_qv(xd)
    return x + drift * h + noise, noise


X0 = Union[float, Sequence[float]]


def _simulate_block(
    params: CirParams,
    controls: Sequence[VolatilityControl],
    x0s: Sequence[float],
    config: EulerConfig,
    t: float,
    t_prime: float,
    block: Tuple[int, int, int],
    observer: Optional[StepObserver] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    block_id, _, count = block
    n_ctrl = len(controls)
    x = np.repeat(np.asarray(x0s, dtype=float)[:, None], count, axis=1)
    running_min = x.copy()
    if t_prime == t:
        return x, running_min
    h = config.mesh(t, t_prime)
    sqrt_h = math.sqrt(h)
    for k in range(config.n_steps):
        t_k = t + k * h
        dw = sqrt_h * block_normals(config.seed, block_id, k)[:count]
        for c in range(n_ctrl):
            theta = controls[c].theta_at(t_k, x[c])
            x_next, noise = euler_step(params, x[c], theta, h, dw, config.full_truncation)
            if observer is not None:
                observer(k, x[c], theta, noise)
            x[c] = x_next
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite Euler state at step {k}", step=k)
        np.minimum(running_min, x, out=running_min)
    return x, running_min


def simulate(
    params: CirParams,
    controls: Sequence[VolatilityControl],
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: X0,
    *,
    threads: Optional[int] = None,
    observer: Optional[StepObserver] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Terminal values and running minima, shape (len(controls), n_paths).

    All controls share the same normals (common random numbers). `x0` may give
    one start per control.
    """
    if t_prime < t:
        raise DomainError("t_prime must not precede t")
    x0s = [float(x0)] * len(controls) if np.isscalar(x0) else [float(v) for v in x0]
    if len(x0s) != len(controls):
        raise DomainError("one starting value per control expected")
    if min(x0s) < 0.0:
        raise DomainError("starting value must be >= 0")

    started = time.time()
    blocks = blocks_for(config.n_paths)
    parts = map_blocks(
        lambda b: _simulate_block(params, controls, x0s, config, t, t_prime, b, observer),
        blocks,
        threads,
    )
    terminal = np.concatenate([p[0] for p in parts], axis=1)
    running_min = np.concatenate([p[1] for p in parts], axis=1)
    log_event(
        "mc_run",
        n_paths=config.n_paths,
        n_steps=config.n_steps,
        n_controls=len(controls),
        blocks=len(blocks),
        duration_ms=int((time.time() - started) * 1000),
    )
    return terminal, running_min


def euler_path(
    params: CirParams,
    control: VolatilityControl,
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    path_index: int,
) -> Tuple[float, float]:
    """(terminal, running minimum) of a single path, identical to its ensemble counterpart."""
    if not 0 <= path_index < config.n_paths:
        raise DomainError(f"path_index {path_index} outside [0, {config.n_paths})")
    block = next(b for b in blocks_for(config.n_paths) if b[1] <= path_index < b[1] + b[2])
    terminal, running_min = _simulate_block(params, [control], [x0], config, t, t_prime, block)
    offset = path_index - block[1]
    return float(terminal[0, offset]), float(running_min[0, offset])


def ensemble(
    params: CirParams,
    control: VolatilityControl,
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    *,
    threads: Optional[int] = None,
) -> PathEnsemble:
    terminal, running_min = simulate(params, [control], config, t, t_prime, x0, threads=threads)
    return PathEnsemble(config=config, control=control, terminal_values=terminal[0], min_values=running_min[0])


def estimate(samples: np.ndarray, theta_star: Optional[float] = None) -> McEstimate:
    n = samples.size
    if n == 1 or np.ptp(samples) == 0.0:
        return McEstimate(value=float(samples[0]), std_error=0.0, n_paths=n, theta_star=theta_star)
    return McEstimate(
        value=float(np.mean(samples)),
        std_error=float(np.std(samples, ddof=1) / math.sqrt(n)),
        n_paths=n,
        theta_star=theta_star,
    )


def mc_expectation(
    phi: Payoff,
    params: CirParams,
    control: VolatilityControl,
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    *,
    threads: Optional[int] = None,
) -> McEstimate:
    terminal, _ = simulate(params, [control], config, t, t_prime, x0, threads=threads)
    return estimate(phi.values(terminal[0]))


def theta_grid(gf: GFunction, n_theta: int) -> np.ndarray:
    if n_theta < 2:
        raise DomainError("n_theta must be at least 2")
    if gf.is_degenerate:
        return np.array([gf.sigma_hi])
    return np.linspace(gf.sigma_lo, gf.sigma_hi, n_theta)


def upper_expectation_constant(
    phi: Payoff,
    params: CirParams,
    gf: GFunction,
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    n_theta: int = 5,
    *,
    threads: Optional[int] = None,
) -> Tuple[McEstimate, float]:
    """Best constant control over an inclusive theta grid, on common random numbers."""
    thetas = theta_grid(gf, n_theta)
    controls = [VolatilityControl.constant(float(th)) for th in thetas]
    terminal, _ = simulate(params, controls, config, t, t_prime, x0, threads=threads)
    estimates = [estimate(phi.values(row)) for row in terminal]
    best = int(np.argmax([e.value for e in estimates]))
    theta_star = float(thetas[best])
    return estimates[best].model_copy(update={"theta_star": theta_star}), theta_star


def upper_expectation_bangbang(
    phi: Payoff,
    params: CirParams,
    gf: GFunction,
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    field: ControlField,
    *,
    threads: Optional[int] = None,
) -> McEstimate:
    """Feedback control theta = sqrt(q*(t_k, nearest node)) from the PDE solution of phi."""
    control = VolatilityControl.bang_bang(field)
    control.check_band(gf)
    return mc_expectation(phi, params, control, config, t, t_prime, x0, threads=threads)


def lower_expectation(
    phi: Payoff,
    params: CirParams,
    gf: GFunction,
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    *,
    method: str = "constant",
    n_theta: int = 5,
    field: Optional[ControlField] = None,
    threads: Optional[int] = None,
) -> McEstimate:
    """-E[-phi]; a bang-bang `field` must come from the PDE solution of -phi."""
    neg = phi.negate()
    if method == "constant":
        est, _ = upper_expectation_constant(neg, params, gf, config, t, t_prime, x0, n_theta, threads=threads)
    elif method == "bangbang":
        if field is None:
            raise DomainError("bang-bang lower expectation needs the control field of -phi")
        est = upper_expectation_bangbang(neg, params, gf, config, t, t_prime, x0, field, threads=threads)
    else:
        raise DomainError(f"unknown estimator {method!r}")
    return est.model_copy(update={"value": -est.value})
