"""Empirical checks of the scheme's quantitative properties.

- increment moments: E[|X_n(t) - X_n(eta_n(t))|^2] scales like h_n
- strong convergence: coupled sup-square error against the finest mesh decreases
- non-negativity: negative parts of the iterates vanish with the mesh
- flow property: splitting the PDE solve at an intermediate time changes nothing
  beyond discretization error
- triangulation: closed form, PDE and Monte Carlo routes against each other
"""
from __future__ import annotations

import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from . import closed_form, pde_solver, simulator
from .closed_form import MomentQuery
from .core import CirParams, GFunction, Regime
from .errors import DomainError
from .events import log_event
from .pde_solver import PdeProblem, SpatialGrid
from .simulator import ControlField, EulerConfig, McEstimate, VolatilityControl, euler_step, sigma_tilde
from .streams import block_normals, blocks_for, map_blocks

MC_BIAS_ALLOWANCE = 5e-3
PDE_RELATIVE_TOLERANCE = 1e-2


class RateStudy(BaseModel):
    kind: str
    meshes: List[float]
    errors: List[float]
    fitted_slope: float
    fitted_intercept: float
    extra: Dict[str, List[float]] = Field(default_factory=dict)

    @field_validator("errors")
    @classmethod
    def _non_negative(cls, v: List[float]) -> List[float]:
        if any(e < 0.0 for e in v):
            raise ValueError("errors must be non-negative")
        return v

    @model_validator(mode="after")
    def _check_meshes(self) -> "RateStudy":
        if any(b >= a for a, b in zip(self.meshes, self.meshes[1:])):
            raise ValueError("meshes must be strictly decreasing")
        if len(self.meshes) != len(self.errors):
            raise ValueError("one error per mesh expected")
        return self


def fit_rate(meshes: Sequence[float], errors: Sequence[float]) -> Tuple[float, float]:
    """Least-squares line through (log h, log error), ignoring zero errors."""
    h = np.asarray(meshes, dtype=float)
    e = np.asarray(errors, dtype=float)
    mask = e > 0.0
    if mask.sum() < 2:
        return math.nan, math.nan
    slope, intercept = np.polyfit(np.log(h[mask]), np.log(e[mask]), 1)
    return float(slope), float(intercept)


def _study(kind: str, meshes: Sequence[float], errors: Sequence[float], **extra: List[float]) -> RateStudy:
    slope, intercept = fit_rate(meshes, errors)
    log_event("study_done", kind=kind, slope=slope, meshes=len(meshes))
    return RateStudy(
        kind=kind,
        meshes=[float(h) for h in meshes],
        errors=[float(e) for e in errors],
        fitted_slope=slope,
        fitted_intercept=intercept,
        extra=extra,
    )


def _steps_for(meshes: Sequence[float], horizon: float) -> List[int]:
    if len(meshes) < 3:
        raise DomainError("a rate study needs at least 3 meshes")
    if any(b >= a for a, b in zip(meshes, meshes[1:])):
        raise DomainError("meshes must be strictly decreasing")
    steps = []
    for h in meshes:
        n = int(round(horizon / h))
        if n < 1 or not math.isclose(n * h, horizon, rel_tol=1e-9):
            raise DomainError(f"mesh {h} does not divide the horizon {horizon}")
        steps.append(n)
    return steps


def increment_moment_study(
    params: CirParams,
    gf: GFunction,
    config_base: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    meshes: Sequence[float],
    *,
    threads: Optional[int] = None,
) -> RateStudy:
    """max over interval midpoints of the sample mean of U_n^2, under theta = sigma_hi."""
    steps = _steps_for(meshes, t_prime - t)
    theta = gf.sigma_hi
    errors = []
    for n_steps in steps:
        h = (t_prime - t) / n_steps
        half = math.sqrt(0.5 * h)

        def run(block: Tuple[int, int, int], n_steps: int = n_steps, h: float = h, half: float = half) -> np.ndarray:
            block_id, _, count = block
            x = np.full(count, x0)
            th = np.full(count, theta)
            sums = np.empty(n_steps)
            for k in range(n_steps):
                z1 = block_normals(config_base.seed, block_id, k, lane=1)[:count]
                z2 = block_normals(config_base.seed, block_id, k, lane=2)[:count]
                drift = params.drift_dt(x) + theta * theta * params.drift_qv(x)
                u = drift * (0.5 * h) + sigma_tilde(params, x) * theta * half * z1
                sums[k] = np.sum(u * u)
                x, _ = euler_step(params, x, th, h, half * (z1 + z2), config_base.full_truncation)
            return sums

        parts = map_blocks(run, blocks_for(config_base.n_paths), threads)
        per_step = np.sum(np.stack(parts), axis=0) / config_base.n_paths
        errors.append(float(np.max(per_step)))
    return _study("increment_moment", meshes, errors)


def strong_error_study(
    params: CirParams,
    gf: GFunction,
    config_base: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    meshes: Sequence[float],
    *,
    theta: Optional[float] = None,
    threads: Optional[int] = None,
) -> RateStudy:
    """Sup-square distance to the finest mesh, coarse paths driven by summed fine increments."""
    steps = _steps_for(meshes, t_prime - t)
    n_ref = steps[-1]
    if any(n_ref % n for n in steps):
        raise DomainError("every mesh must be an integer multiple of the finest one")
    ratios = [n_ref // n for n in steps]
    theta = gf.sigma_hi if theta is None else theta
    h_ref = (t_prime - t) / n_ref
    sqrt_h = math.sqrt(h_ref)

    def run(block: Tuple[int, int, int]) -> np.ndarray:
        block_id, _, count = block
        th = np.full(count, theta)
        x_ref = np.full(count, x0)
        xs = [np.full(count, x0) for _ in ratios]
        acc = [np.zeros(count) for _ in ratios]
        sup = [np.zeros(count) for _ in ratios]
        for k in range(n_ref):
            dw = sqrt_h * block_normals(config_base.seed, block_id, k)[:count]
            x_ref, _ = euler_step(params, x_ref, th, h_ref, dw, config_base.full_truncation)
            for m, r in enumerate(ratios):
                acc[m] += dw
                if (k + 1) % r == 0:
                    xs[m], _ = euler_step(params, xs[m], th, r * h_ref, acc[m], config_base.full_truncation)
                    acc[m][:] = 0.0
                    np.maximum(sup[m], (xs[m] - x_ref) ** 2, out=sup[m])
        return np.stack([s.sum() for s in sup])

    parts = map_blocks(run, blocks_for(config_base.n_paths), threads)
    errors = np.sum(np.stack(parts), axis=0) / config_base.n_paths
    return _study("strong_error", meshes, errors.tolist())


def negativity_diagnostic(
    params: CirParams,
    gf: GFunction,
    config_base: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    meshes: Sequence[float],
    *,
    n_theta: int = 2,
    threads: Optional[int] = None,
) -> RateStudy:
    """Worst-theta mean of X_n(t')^- per mesh.

    `extra` carries the fraction of paths whose running minimum went negative and
    the worst mean depth of that minimum. Near zero the scheme is scale invariant
    (state and noise are both O(h)), so the fraction need not vanish; the depths do.
    """
    steps = _steps_for(meshes, t_prime - t)
    thetas = simulator.theta_grid(gf, n_theta)
    controls = [VolatilityControl.constant(float(th)) for th in thetas]
    errors, fractions, depths = [], [], []
    for n_steps in steps:
        config = config_base.model_copy(update={"n_steps": n_steps})
        terminal, running_min = simulator.simulate(params, controls, config, t, t_prime, x0, threads=threads)
        errors.append(float(np.max(np.mean(np.maximum(-terminal, 0.0), axis=1))))
        fractions.append(float(np.max(np.mean(running_min < 0.0, axis=1))))
        depths.append(float(np.max(np.mean(np.maximum(-running_min, 0.0), axis=1))))
    return _study("negativity", meshes, errors, negative_fraction=fractions, min_depth=depths)


def initial_value_stability(
    params: CirParams,
    gf: GFunction,
    config: EulerConfig,
    t: float,
    t_prime: float,
    x0: float,
    offsets: Sequence[float],
    *,
    n_theta: int = 2,
    threads: Optional[int] = None,
) -> RateStudy:
    """Worst-theta mean of |X^{x0+d}_{t'} - X^{x0}_{t'}| on common noise, per offset d."""
    if len(offsets) < 3 or any(b >= a for a, b in zip(offsets, offsets[1:])) or offsets[-1] <= 0.0:
        raise DomainError("offsets must be at least 3 positive, strictly decreasing values")
    thetas = simulator.theta_grid(gf, n_theta)
    errors = []
    for d in offsets:
        controls, starts = [], []
        for th in thetas:
            controls += [VolatilityControl.constant(float(th))] * 2
            starts += [x0, x0 + d]
        terminal, _ = simulator.simulate(params, controls, config, t, t_prime, starts, threads=threads)
        gaps = np.abs(terminal[1::2] - terminal[0::2])
        errors.append(float(np.max(np.mean(gaps, axis=1))))
    return _study("initial_value_stability", offsets, errors)


def markov_semigroup_check(
    problem: PdeProblem,
    grid: SpatialGrid,
    gamma: float,
    dt_cap: Optional[float] = None,
) -> float:
    """Max-norm gap at t = 0 between a solve split at t' - gamma and the one-shot solve."""
    if not 0.0 <= gamma <= problem.t_prime:
        raise DomainError(f"gamma must lie in [0, {problem.t_prime}], got {gamma}")
    split = problem.t_prime - gamma
    direct = pde_solver.solve(problem, grid, dt_cap)
    tail = pde_solver.solve_segment(problem, grid, split, problem.t_prime, direct.terminal, dt_cap)
    head = pde_solver.solve_segment(problem, grid, 0.0, split, tail.initial, dt_cap)
    return float(np.max(np.abs(head.initial - direct.initial)))


class RouteValue(BaseModel):
    route: str
    side: str  # "upper" or "lower"
    value: float
    std_error: float = 0.0
    reference: Optional[float] = None
    discrepancy: Optional[float] = None
    tolerance: Optional[float] = None
    check: str = "none"  # "two_sided", "at_least", "at_most" or "none"
    ok: bool = True


class TriangulationReport(BaseModel):
    regime: Regime
    payoff: str
    x0: float
    t_prime: float
    oracle_exact: bool
    routes: List[RouteValue]
    ok: bool


def _checked(route: RouteValue, reference: Optional[float], tolerance: float, check: str) -> RouteValue:
    if reference is None:
        return route
    gap = route.value - reference
    if check == "two_sided":
        ok = abs(gap) <= tolerance
    elif check == "at_least":
        ok = gap >= -tolerance
    else:
        ok = gap <= tolerance
    return route.model_copy(
        update={"reference": reference, "discrepancy": abs(gap), "tolerance": tolerance, "check": check, "ok": ok}
    )


def triangulation_report(
    problem: PdeProblem,
    grid: SpatialGrid,
    config: EulerConfig,
    x0: float,
    *,
    n_theta: int = 5,
    dt_cap: Optional[float] = None,
    threads: Optional[int] = None,
) -> TriangulationReport:
    """Every route for the upper and lower expectation of phi at (0, x0), cross-checked.

    In the quadratic-variation regime with sigma > 0 the closed form is the best
    constant-volatility value, so it bounds the PDE and feedback routes from one side.
    """
    started = time.time()
    params, gf, phi, t_prime = problem.params, problem.gf, problem.payoff, problem.t_prime
    regime = params.regime
    query = MomentQuery(params=params, t=0.0, t_prime=t_prime, x=x0)
    cf_upper = closed_form.oracle_for(regime, phi.kind.value, query, gf)
    neg = closed_form.oracle_for(regime, phi.negate().kind.value, query, gf)
    cf_lower = None if neg is None else -neg
    exact = cf_upper is not None and (regime is Regime.DRIFT_ONLY or params.sigma == 0.0)

    upper_sol = pde_solver.solve(problem, grid, dt_cap)
    lower_sol = pde_solver.solve(problem.with_payoff(phi.negate()), grid, dt_cap)
    pde_upper = pde_solver.evaluate(upper_sol, 0.0, x0)
    pde_lower = -pde_solver.evaluate(lower_sol, 0.0, x0)

    mc_const, _ = simulator.upper_expectation_constant(phi, params, gf, config, 0.0, t_prime, x0, n_theta, threads=threads)
    mc_bang = simulator.upper_expectation_bangbang(
        phi, params, gf, config, 0.0, t_prime, x0, ControlField.from_solution(upper_sol), threads=threads
    )
    mc_lower = simulator.lower_expectation(phi, params, gf, config, 0.0, t_prime, x0, n_theta=n_theta, threads=threads)

    def pde_tol(ref: Optional[float]) -> float:
        return PDE_RELATIVE_TOLERANCE * (1.0 + abs(ref if ref is not None else 0.0))

    def mc_tol(est: McEstimate) -> float:
        return 3.0 * est.std_error + MC_BIAS_ALLOWANCE

    routes: List[RouteValue] = []
    if cf_upper is not None:
        routes.append(RouteValue(route="closed_form", side="upper", value=cf_upper))
    if cf_lower is not None:
        routes.append(RouteValue(route="closed_form", side="lower", value=cf_lower))

    if cf_upper is not None:
        feedback = "two_sided" if exact else "at_least"
        routes.append(_checked(RouteValue(route="pde", side="upper", value=pde_upper), cf_upper, pde_tol(cf_upper), feedback))
        routes.append(_checked(_mc_route("mc_constant", "upper", mc_const), cf_upper, mc_tol(mc_const), "two_sided"))
        routes.append(_checked(_mc_route("mc_bangbang", "upper", mc_bang), cf_upper, mc_tol(mc_bang) + pde_tol(cf_upper), feedback))
    else:
        routes.append(RouteValue(route="pde", side="upper", value=pde_upper))
        # any single prior stays below the sublinear expectation
        routes.append(_checked(_mc_route("mc_constant", "upper", mc_const), pde_upper, mc_tol(mc_const) + pde_tol(pde_upper), "at_most"))
        routes.append(_checked(_mc_route("mc_bangbang", "upper", mc_bang), pde_upper, mc_tol(mc_bang) + pde_tol(pde_upper), "at_most"))

    if cf_lower is not None:
        feedback = "two_sided" if exact else "at_most"
        routes.append(_checked(RouteValue(route="pde", side="lower", value=pde_lower), cf_lower, pde_tol(cf_lower), feedback))
        routes.append(_checked(_mc_route("mc_constant", "lower", mc_lower), cf_lower, mc_tol(mc_lower), "two_sided"))
    else:
        routes.append(RouteValue(route="pde", side="lower", value=pde_lower))
        routes.append(_checked(_mc_route("mc_constant", "lower", mc_lower), pde_lower, mc_tol(mc_lower) + pde_tol(pde_lower), "at_least"))

    if gf.is_degenerate:
        routes.append(_checked(RouteValue(route="pde_band", side="upper", value=pde_upper), pde_lower, pde_tol(pde_lower), "two_sided"))
        routes.append(
            _checked(_mc_route("mc_band", "upper", mc_const), mc_lower.value, 3.0 * (mc_const.std_error + mc_lower.std_error) + 1e-12, "two_sided")
        )
    else:
        routes.append(_checked(RouteValue(route="pde_order", side="upper", value=pde_upper), pde_lower, pde_tol(pde_lower), "at_least"))

    report = TriangulationReport(
        regime=regime,
        payoff=phi.kind.value,
        x0=x0,
        t_prime=t_prime,
        oracle_exact=exact,
        routes=routes,
        ok=all(r.ok for r in routes),
    )
    log_event("triangulation", ok=report.ok, routes=len(routes), duration_ms=int((time.time() - started) * 1000))
    return report


def _mc_route(name: str, side: str, est: McEstimate) -> RouteValue:
    return RouteValue(route=name, side=side, value=est.value, std_error=est.std_error)
