from __future__ import annotations

import math

import numpy as np
import pytest

from gcir.closed_form import (
    MomentQuery,
    mean_drift_case,
    mean_lower_qv_case,
    mean_upper_qv_case,
    second_moment_drift_case,
)
from gcir.core import CirParams, GFunction, Payoff, PayoffKind, Regime
from gcir.errors import DomainError, NonFiniteError, StabilityError
from gcir.pde_solver import (
    PdeProblem,
    SpatialGrid,
    cfl_dt,
    default_x_max,
    distribution_function,
    evaluate,
    optimal_control_field,
    solve,
    solve_segment,
)

BAND = GFunction(sigma_lo_sq=1.0, sigma_hi_sq=2.0)


def _qv(sigma: float) -> CirParams:
    return CirParams(delta1=0.0, delta2=1.0, beta1=0.0, beta2=1.0, sigma=sigma, regime=Regime.QV_ONLY)


def test_drift_case_identity_matches_mean():
    params = CirParams(delta1=1.0, delta2=0.0, beta1=0.5, beta2=0.0, sigma=1.0, regime=Regime.DRIFT_ONLY)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    sol = solve(problem, SpatialGrid(x_max=5.0, nx=501))
    assert abs(evaluate(sol, 0.0, 1.0) - (2.0 - math.exp(-0.5))) <= 1e-2


def test_drift_case_square_matches_upper_second_moment():
    params = CirParams(delta1=1.0, delta2=0.0, beta1=1.0, beta2=0.0, sigma=1.0, regime=Regime.DRIFT_ONLY)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.square(), t_prime=1.0)
    sol = solve(problem, SpatialGrid(x_max=5.0, nx=501))
    assert abs(evaluate(sol, 0.0, 1.0) - (2.0 - math.exp(-2.0))) <= 2e-2
    # convex terminal data keeps the upper variance active everywhere
    assert np.all(optimal_control_field(sol) == BAND.sigma_hi_sq)


def test_truncation_doubling_moves_answer_little():
    params = CirParams(delta1=1.0, delta2=0.0, beta1=1.0, beta2=0.0, sigma=1.0, regime=Regime.DRIFT_ONLY)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.square(), t_prime=1.0)
    near = evaluate(solve(problem, SpatialGrid(x_max=5.0, nx=251)), 0.0, 1.0)
    far = evaluate(solve(problem, SpatialGrid(x_max=10.0, nx=501)), 0.0, 1.0)
    assert abs(near - far) < 5e-3


def test_qv_case_without_diffusion_matches_kinked_formulas():
    params = _qv(0.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    grid = SpatialGrid(x_max=5.0, nx=201)
    upper = solve(problem, grid)
    lower = solve(problem.with_payoff(Payoff.identity().negate()), grid)
    for x in (0.0, 0.5, 1.0, 2.0):
        q = MomentQuery(params=params, t_prime=1.0, x=x)
        assert abs(evaluate(upper, 0.0, x) - mean_upper_qv_case(q, BAND)) <= 1e-2
        assert abs(-evaluate(lower, 0.0, x) - mean_lower_qv_case(q, BAND)) <= 1e-2

    controls = optimal_control_field(upper)[0]
    nodes = grid.nodes
    assert np.all(controls[nodes < 0.9] == BAND.sigma_hi_sq)
    assert np.all(controls[(nodes > 1.1) & (nodes < 4.0)] == BAND.sigma_lo_sq)


def test_qv_case_with_diffusion_is_bounded_by_constant_volatility_values():
    params = _qv(1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    grid = SpatialGrid(x_max=6.0, nx=241)
    upper = solve(problem, grid)
    lower = solve(problem.with_payoff(Payoff.identity().negate()), grid)
    for x in (0.0, 0.5, 1.0, 2.0):
        q = MomentQuery(params=params, t_prime=1.0, x=x)
        assert evaluate(upper, 0.0, x) >= mean_upper_qv_case(q, BAND) - 1e-2
        assert -evaluate(lower, 0.0, x) <= mean_lower_qv_case(q, BAND) + 1e-2


def test_terminal_level_is_the_payoff():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    phi = Payoff.smoothed_indicator(1.0, 0.2)
    grid = SpatialGrid(x_max=4.0, nx=81)
    sol = solve(PdeProblem(params=params, gf=BAND, payoff=phi, t_prime=0.5), grid)
    assert np.array_equal(sol.terminal, phi.values(grid.nodes))
    assert sol.times[0] == 0.0 and sol.times[-1] == 0.5
    assert len(sol.times) <= 257
    for x in grid.nodes[::10]:
        assert evaluate(sol, 0.5, float(x)) == pytest.approx(float(phi.values(np.array([x]))[0]), abs=1e-12)


def test_degenerate_band_has_no_gap():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    gf = GFunction.degenerate(1.5)
    problem = PdeProblem(params=params, gf=gf, payoff=Payoff.smoothed_indicator(1.0, 0.2), t_prime=1.0)
    grid = SpatialGrid(x_max=5.0, nx=101)
    upper = solve(problem, grid)
    lower = solve(problem.with_payoff(problem.payoff.negate()), grid)
    assert np.allclose(upper.initial, -lower.initial, atol=1e-12)


def test_values_stay_within_payoff_range():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.smoothed_indicator(1.0, 0.2), t_prime=1.0)
    sol = solve(problem, SpatialGrid(x_max=5.0, nx=101))
    assert sol.values.min() >= -1e-12
    assert sol.values.max() <= 1.0 + 1e-12


def test_cfl_violation_is_rejected():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    grid = SpatialGrid(x_max=5.0, nx=101)
    limit = cfl_dt(grid, params, BAND)
    with pytest.raises(StabilityError):
        solve(problem, grid, dt_cap=2.0 * limit)
    sol = solve(problem, grid, dt_cap=0.5 * limit)
    assert sol.dt_used <= 0.5 * limit


def test_non_finite_terminal_data_is_located():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    grid = SpatialGrid(x_max=5.0, nx=51)
    terminal = grid.nodes.copy()
    terminal[3] = np.nan
    with pytest.raises(NonFiniteError) as err:
        solve_segment(problem, grid, 0.0, 1.0, terminal)
    assert err.value.where == {"time_level": 0, "node": 3}
    assert err.value.error_type == "NonFiniteError"


def test_zero_length_segment_returns_terminal_data():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.square(), t_prime=1.0)
    grid = SpatialGrid(x_max=5.0, nx=51)
    sol = solve_segment(problem, grid, 0.4, 0.4, grid.nodes**2)
    assert sol.n_steps == 0
    assert np.array_equal(sol.initial, grid.nodes**2)
    assert evaluate(sol, 0.4, 2.05) == pytest.approx(0.5 * (2.0**2 + 2.1**2))


def test_evaluate_outside_domain():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=0.1)
    sol = solve(problem, SpatialGrid(x_max=5.0, nx=51))
    with pytest.raises(DomainError):
        evaluate(sol, 0.0, 5.5)
    with pytest.raises(DomainError):
        evaluate(sol, 0.2, 1.0)


def test_distribution_function_is_ordered():
    params = _qv(1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    grid = SpatialGrid(x_max=5.0, nx=101)
    points = distribution_function(problem, grid, 0.5, [0.25, 0.5, 1.0, 1.5, 2.5], width=0.1)
    uppers = [p.upper for p in points]
    assert all(b >= a - 1e-12 for a, b in zip(uppers, uppers[1:]))
    for p in points:
        assert -1e-12 <= p.lower <= p.upper + 1e-12
        assert p.upper <= 1.0 + 1e-12


def test_default_truncation_covers_query_point():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    assert default_x_max(params, BAND, 3.0) >= 15.0
    assert Payoff(kind=PayoffKind.SQUARE, domain_cap=default_x_max(params, BAND, 1.0)).lipschitz_bound < math.inf


def test_comparison_principle_on_random_payoff_pairs():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    grid = SpatialGrid(x_max=4.0, nx=61)
    xs = tuple(np.linspace(0.0, 4.0, 9))
    rng = np.random.default_rng(8)
    for _ in range(5):
        ys = rng.uniform(-1.0, 1.0, size=len(xs))
        bump = rng.uniform(0.0, 0.5, size=len(xs))
        low = Payoff(kind=PayoffKind.CUSTOM, xs=xs, ys=tuple(ys))
        high = Payoff(kind=PayoffKind.CUSTOM, xs=xs, ys=tuple(ys + bump))
        problem = PdeProblem(params=params, gf=BAND, payoff=low, t_prime=0.5)
        u_low = solve(problem, grid).values
        u_high = solve(problem.with_payoff(high), grid).values
        assert np.all(u_low <= u_high + 1e-12)


def test_constants_are_preserved():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.constant(0.7), t_prime=1.0)
    sol = solve(problem, SpatialGrid(x_max=5.0, nx=51))
    assert np.all(sol.values == 0.7)


def test_degenerate_band_matches_linear_solve():
    params = CirParams(delta1=1.0, delta2=1.0, beta1=1.0, beta2=1.0, sigma=1.0)
    problem = PdeProblem(params=params, gf=GFunction.degenerate(1.5), payoff=Payoff.smoothed_indicator(1.0, 0.2), t_prime=1.0)
    grid = SpatialGrid(x_max=5.0, nx=101)
    nonlinear = solve(problem, grid)
    linear = solve(problem, grid, linear_q=1.5)
    assert nonlinear.n_steps == linear.n_steps
    assert np.max(np.abs(nonlinear.values - linear.values)) <= 1e-12


def _refinement_order(problem: PdeProblem, x_max: float, nx: int, oracle: dict) -> float:
    errors = []
    for n in (nx, 2 * nx - 1):
        sol = solve(problem, SpatialGrid(x_max=x_max, nx=n))
        errors.append(max(abs(evaluate(sol, 0.0, x) - v) for x, v in oracle.items()))
    assert errors[1] < errors[0]
    return math.log2(errors[0] / errors[1])


def test_grid_refinement_order_in_the_drift_mean_case():
    params = CirParams(delta1=1.0, delta2=0.0, beta1=0.5, beta2=0.0, sigma=1.0, regime=Regime.DRIFT_ONLY)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    oracle = {x: mean_drift_case(MomentQuery(params=params, t_prime=1.0, x=x)) for x in (0.5, 1.0, 2.0)}
    assert _refinement_order(problem, 5.0, 51, oracle) >= 0.8


def test_grid_refinement_order_in_the_drift_square_case():
    params = CirParams(delta1=1.0, delta2=0.0, beta1=1.0, beta2=0.0, sigma=1.0, regime=Regime.DRIFT_ONLY)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.square(), t_prime=1.0)
    q = MomentQuery(params=params, t_prime=1.0, x=1.0)
    # a far boundary keeps truncation error below the discretization error
    assert _refinement_order(problem, 10.0, 101, {1.0: second_moment_drift_case(q, BAND.sigma_hi_sq)}) >= 0.8


def test_grid_refinement_order_in_the_qv_case():
    params = _qv(0.0)
    problem = PdeProblem(params=params, gf=BAND, payoff=Payoff.identity(), t_prime=1.0)
    oracle = {x: mean_upper_qv_case(MomentQuery(params=params, t_prime=1.0, x=x), BAND) for x in (0.5, 2.0)}
    assert _refinement_order(problem, 5.0, 101, oracle) >= 0.8
