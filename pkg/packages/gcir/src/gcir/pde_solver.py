"""Explicit monotone finite differences for

    u_t + (d1 - b1 x) u_x + 2G((d2 - b2 x) u_x + sigma^2 x/2 u_xx) = 0,  u(t', x) = phi(x)

on [0, t'] x [0, x_max]. Since 2G(a) = max over q in {lo, hi} of q*a, each step
takes the pointwise max of two linear operators, each upwinded against its own
effective drift d1 - b1 x + q (d2 - b2 x). Both operators are monotone under
`cfl_dt`, hence so is their max.

Boundaries: at x = 0 the diffusion vanishes and the forward (inflow) difference
is used; at x_max, u_xx = 0 and the first derivative is the backward difference.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.interpolate import RegularGridInterpolator

from .core import CirParams, GFunction, Payoff
from .errors import DomainError, NonFiniteError, StabilityError
from .events import log_event

DEFAULT_CFL_FRACTION = 0.9
DEFAULT_MAX_LEVELS = 257


class SpatialGrid(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    x_max: float = Field(..., gt=0.0)
    nx: int = Field(..., ge=16)

    @property
    def dx(self) -> float:
        return self.x_max / (self.nx - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.nx)


class PdeProblem(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    params: CirParams
    gf: GFunction
    payoff: Payoff
    t_prime: float = Field(..., gt=0.0)

    def with_payoff(self, payoff: Payoff) -> "PdeProblem":
        return self.model_copy(update={"payoff": payoff})


@dataclass(frozen=True)
class PdeSolution:
    grid: SpatialGrid
    times: np.ndarray  # ascending stored levels
    values: np.ndarray  # u[level, node]
    controls: np.ndarray  # maximizing q[level, node]
    dt_used: float
    n_steps: int

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]


def default_x_max(params: CirParams, gf: GFunction, x_query: float) -> float:
    betas = [b for b in (params.beta1, params.beta2) if b > 0.0]
    reach = (params.delta1 + gf.sigma_hi_sq * params.delta2) / min(betas) * 4.0 + 5.0
    return max(5.0 * x_query, reach)


def default_grid(params: CirParams, gf: GFunction, x_query: float, nx: int = 501) -> SpatialGrid:
    return SpatialGrid(x_max=default_x_max(params, gf, x_query), nx=nx)


def cfl_dt(grid: SpatialGrid, params: CirParams, gf: GFunction) -> float:
    """Largest dt with dt*(hi*sigma^2*x_max/dx^2 + A/dx) <= 1."""
    x = grid.nodes
    advection = float(np.max(np.abs(params.drift_dt(x)) + gf.sigma_hi_sq * np.abs(params.drift_qv(x))))
    diffusion = gf.sigma_hi_sq * params.sigma**2 * grid.x_max / grid.dx**2
    rate = diffusion + advection / grid.dx
    return math.inf if rate == 0.0 else 1.0 / rate


class _Stencil:
    """Precomputed coefficients of the candidate linear operators."""

    def __init__(self, grid: SpatialGrid, params: CirParams, qs: Sequence[float]) -> None:
        x = grid.nodes
        self.dx = grid.dx
        self.qs = tuple(qs)
        half_var = 0.5 * params.sigma**2 * x
        self.drifts = [params.drift_dt(x) + q * params.drift_qv(x) for q in self.qs]
        self.upwind = [c > 0.0 for c in self.drifts]
        self.diffusions = [q * half_var for q in self.qs]

    def hamiltonian(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dx = self.dx
        fwd = np.empty_like(u)
        fwd[:-1] = (u[1:] - u[:-1]) / dx
        fwd[-1] = fwd[-2]
        bwd = np.empty_like(u)
        bwd[1:] = fwd[:-1]
        bwd[0] = fwd[0]
        d2 = np.zeros_like(u)
        d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (dx * dx)

        best = None
        qstar = None
        # hi is last in self.qs, so ">=" resolves ties to the upper variance
        for q, c, up, diff in zip(self.qs, self.drifts, self.upwind, self.diffusions):
            h = c * np.where(up, fwd, bwd) + diff * d2
            if best is None:
                best, qstar = h, np.full_like(u, q)
            else:
                take = h >= best
                best = np.where(take, h, best)
                qstar = np.where(take, q, qstar)
        return best, qstar


def _check_finite(u: np.ndarray, level: int, t: float) -> None:
    if not np.all(np.isfinite(u)):
        node = int(np.flatnonzero(~np.isfinite(u))[0])
        raise NonFiniteError(f"non-finite value at time level {level} (t={t}), node {node}", time_level=level, node=node)


def solve_segment(
    problem: PdeProblem,
    grid: SpatialGrid,
    t_from: float,
    t_to: float,
    terminal: np.ndarray,
    dt_cap: Optional[float] = None,
    *,
    linear_q: Optional[float] = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
) -> PdeSolution:
    """Step backward from `terminal` at t_to to t_from.

    `linear_q` freezes the variance at one value, which turns the equation
    into a linear advection-diffusion problem.
    """
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (grid.nx,):
        raise DomainError(f"terminal data must have {grid.nx} values, got {terminal.shape}")
    if not (0.0 <= t_from <= t_to <= problem.t_prime):
        raise DomainError(f"segment [{t_from}, {t_to}] outside [0, {problem.t_prime}]")

    params, gf = problem.params, problem.gf
    qs = (linear_q,) if linear_q is not None else (gf.sigma_lo_sq, gf.sigma_hi_sq)
    stencil = _Stencil(grid, params, qs)
    limit = cfl_dt(grid, params, gf)
    if dt_cap is not None and dt_cap > limit:
        raise StabilityError(f"dt_cap={dt_cap} violates the CFL limit {limit}")

    length = t_to - t_from
    if length == 0.0:
        _, q0 = stencil.hamiltonian(terminal)
        return PdeSolution(grid, np.array([t_to]), terminal[None, :].copy(), q0[None, :], 0.0, 0)

    target = dt_cap if dt_cap is not None else DEFAULT_CFL_FRACTION * limit
    n_steps = max(1, math.ceil(length / target)) if math.isfinite(target) else 1
    dt = length / n_steps
    stride = max(1, math.ceil(n_steps / (max_levels - 1)))

    started = time.time()
    u = terminal.copy()
    _check_finite(u, 0, t_to)
    levels: List[np.ndarray] = [u.copy()]
    times: List[float] = [t_to]
    for k in range(1, n_steps + 1):
        h, _ = stencil.hamiltonian(u)
        u = u + dt * h
        t_k = t_from if k == n_steps else t_to - k * dt
        _check_finite(u, k, t_k)
        if k % stride == 0 or k == n_steps:
            levels.append(u.copy())
            times.append(t_k)
    controls = [stencil.hamiltonian(level)[1] for level in levels]

    log_event(
        "pde_solve",
        nx=grid.nx,
        n_steps=n_steps,
        dt=dt,
        t_from=t_from,
        t_to=t_to,
        duration_ms=int((time.time() - started) * 1000),
    )
    return PdeSolution(
        grid=grid,
        times=np.asarray(times[::-1]),
        values=np.stack(levels[::-1]),
        controls=np.stack(controls[::-1]),
        dt_used=dt,
        n_steps=n_steps,
    )


def solve(
    problem: PdeProblem,
    grid: SpatialGrid,
    dt_cap: Optional[float] = None,
    *,
    linear_q: Optional[float] = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
) -> PdeSolution:
    terminal = problem.payoff.values(grid.nodes)
    return solve_segment(
        problem, grid, 0.0, problem.t_prime, terminal, dt_cap, linear_q=linear_q, max_levels=max_levels
    )


def evaluate(sol: PdeSolution, t: float, x: float) -> float:
    """Bilinear interpolation in (t, x); exact at stored nodes."""
    t0, t1 = float(sol.times[0]), float(sol.times[-1])
    if not (t0 <= t <= t1) or not (0.0 <= x <= sol.grid.x_max):
        raise DomainError(f"({t}, {x}) outside [{t0}, {t1}] x [0, {sol.grid.x_max}]")
    if len(sol.times) == 1:
        return float(np.interp(x, sol.grid.nodes, sol.values[0]))
    interp = RegularGridInterpolator((sol.times, sol.grid.nodes), sol.values, method="linear")
    return float(interp([[t, x]])[0])


def optimal_control_field(sol: PdeSolution) -> np.ndarray:
    """Maximizing variance q*[level, node], every entry in {lo, hi}."""
    return sol.controls


class CdfPoint(BaseModel):
    a: float
    upper: float
    lower: float


def distribution_function(
    problem: PdeProblem,
    grid: SpatialGrid,
    x0: float,
    thresholds: Sequence[float],
    width: float = 0.05,
    dt_cap: Optional[float] = None,
) -> List[CdfPoint]:
    """Upper and lower distribution functions E[1{X <= a}] from smoothed indicators."""
    points = []
    for a in thresholds:
        phi = Payoff.smoothed_indicator(a, width)
        upper = evaluate(solve(problem.with_payoff(phi), grid, dt_cap), 0.0, x0)
        lower = -evaluate(solve(problem.with_payoff(phi.negate()), grid, dt_cap), 0.0, x0)
        points.append(CdfPoint(a=a, upper=upper, lower=lower))
    return points
