from __future__ import annotations

import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gcir import __version__
from gcir import analysis, closed_form, pde_solver, simulator
from gcir.closed_form import MomentQuery
from gcir.core import GFunction, Regime, g_argmax, g_eval
from gcir.errors import RegimeError, ToleranceError
from gcir.export import (
    dumps,
    estimate_json,
    report_text,
    short,
    write_cdf_csv,
    write_ensemble_csv,
    write_json,
    write_rate_csv,
    write_solution_csv,
)
from gcir.simulator import ControlField
from gcir_runtime import CommandRegistry, command, get_run_context
from gcir_runtime import handler as runtime_handler

from .config import RunConfig, load_config

TOOLSET_DIR = Path(__file__).resolve().parents[1]

registry = CommandRegistry.instance()
registry.load_metadata(TOOLSET_DIR / "toolset.yaml")

_STRICT = ConfigDict(extra="forbid")


def resolve_threads() -> int:
    """--threads, then GCIR_THREADS, then the toolset default."""
    ctx = get_run_context()
    if ctx.threads is not None:
        return ctx.threads
    env = os.getenv("GCIR_THREADS")
    return int(env) if env else registry.default_threads


class _Artifacts:
    """Files written by one command. The JSON document carries the reproducibility stamp
    and stands for its sibling CSVs; the `.meta.json` sidecar repeats the stamp, lists those
    siblings and holds wall-clock data, so artifact bytes depend on the config and seed only."""

    def __init__(self, command_name: str, cfg: RunConfig) -> None:
        self.command_name = command_name
        self.cfg = cfg
        self.out_dir = Path(get_run_context().out_dir)
        self.paths: List[Path] = []

    def path(self, suffix: str) -> Path:
        stem = f"{self.cfg.outputs.prefix}_{self.command_name.replace('-', '_')}"
        return self.out_dir / f"{stem}{suffix}"

    def add(self, path: Path) -> Path:
        self.paths.append(path)
        return path

    def finish(self, body: Dict[str, Any], summary: Optional[str] = None) -> "ArtifactResult":
        stamp = {
            "tool_version": __version__,
            "config_hash": self.cfg.config_hash(),
            "seed": self.cfg.euler.seed,
        }
        doc = {"command": self.command_name, **stamp, **body}
        siblings = [p.name for p in self.paths]
        main = self.add(write_json(doc, self.path(".json")))
        meta = {
            "artifact": main.name,
            "siblings": siblings,
            "stamp": stamp,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "threads": resolve_threads(),
        }
        self.add(write_json(meta, self.path(".meta.json")))
        return ArtifactResult(
            summary=summary if summary is not None else dumps(doc).rstrip("\n"),
            artifacts=[str(p) for p in self.paths],
            document=doc,
        )


class ConfigParams(BaseModel):
    model_config = _STRICT

    config: str = Field(..., description="Path to the run config (JSON or YAML)")


class ArtifactResult(BaseModel):
    summary: str = Field(..., description="Human-readable output printed by the CLI")
    artifacts: List[str] = Field(default_factory=list)
    document: Dict[str, Any] = Field(default_factory=dict, description="Contents of the main JSON artifact")


def _load(params: ConfigParams) -> RunConfig:
    return load_config(params.config, get_run_context().seed_override)


class GfunParams(BaseModel):
    model_config = _STRICT

    lo_sq: float = Field(..., ge=0.0, description="Lower variance bound")
    hi_sq: float = Field(..., gt=0.0, description="Upper variance bound")
    a: float = Field(..., description="Argument of G")


class GfunResult(BaseModel):
    value: float
    argmax: float
    summary: str


@command
def gfun(params: GfunParams) -> GfunResult:
    """Evaluate G(a) = 1/2 (hi a^+ - lo a^-) and its maximizing variance."""
    gf = GFunction(sigma_lo_sq=params.lo_sq, sigma_hi_sq=params.hi_sq, allow_degenerate=True)
    value = g_eval(gf, params.a)
    return GfunResult(value=value, argmax=g_argmax(gf, params.a), summary=short(value))


@command
def moments(params: ConfigParams) -> ArtifactResult:
    """Closed-form moments in the drift-only and quadratic-variation-only regimes."""
    cfg = _load(params)
    regime = cfg.params.regime
    q = MomentQuery(params=cfg.params, t=cfg.t, t_prime=cfg.t_prime, x=cfg.x0)
    if regime is Regime.DRIFT_ONLY:
        var_lower, var_upper = closed_form.variance_drift_case(q, cfg.band)
        body: Dict[str, Any] = {
            "mean": closed_form.mean_drift_case(q),
            "second_moment_upper": closed_form.second_moment_drift_case(q, cfg.band.sigma_hi_sq),
            "second_moment_lower": closed_form.second_moment_drift_case(q, cfg.band.sigma_lo_sq),
            "variance_upper": var_upper,
            "variance_lower": var_lower,
        }
    elif regime is Regime.QV_ONLY:
        body = {
            "mean_upper": closed_form.mean_upper_qv_case(q, cfg.band),
            "mean_lower": closed_form.mean_lower_qv_case(q, cfg.band),
            "kink": cfg.params.delta2 / cfg.params.beta2,
            # with diffusion the formulas are the best constant-volatility values
            "exact": cfg.params.sigma == 0.0,
        }
    else:
        raise RegimeError("closed-form moments need params.regime drift_only or qv_only")
    out = _Artifacts("moments", cfg)
    return out.finish({"regime": regime.value, "t": cfg.t, "t_prime": cfg.t_prime, "x0": cfg.x0, "moments": body})


@command
def pde(params: ConfigParams) -> ArtifactResult:
    """Upper and lower expectation of the payoff from the PDE; value surfaces as CSV."""
    cfg = _load(params)
    grid = cfg.spatial_grid()
    problem = cfg.problem()
    upper = pde_solver.solve(problem, grid, cfg.grid.dt_cap)
    lower = pde_solver.solve(problem.with_payoff(cfg.payoff.negate()), grid, cfg.grid.dt_cap)

    out = _Artifacts("pde", cfg)
    out.add(write_solution_csv(upper, out.path("_upper.csv")))
    out.add(write_solution_csv(lower, out.path("_lower.csv"), sign=-1.0))
    hi_share = float(np.mean(pde_solver.optimal_control_field(upper)[0] == cfg.band.sigma_hi_sq))
    return out.finish(
        {
            "x0": cfg.x0,
            "upper": pde_solver.evaluate(upper, 0.0, cfg.x0),
            "lower": -pde_solver.evaluate(lower, 0.0, cfg.x0),
            "grid": {"x_max": grid.x_max, "nx": grid.nx, "dt": upper.dt_used, "n_steps": upper.n_steps},
            "upper_control_hi_share": hi_share,
        }
    )


@command
def simulate(params: ConfigParams) -> ArtifactResult:
    """Euler ensemble under the configured control; per-path terminal values as CSV."""
    cfg = _load(params)
    control = cfg.volatility_control()
    ens = simulator.ensemble(
        cfg.params, control, cfg.euler_config(), cfg.t, cfg.t_prime, cfg.x0, threads=resolve_threads()
    )
    est = simulator.estimate(cfg.payoff.values(ens.terminal_values))

    out = _Artifacts("simulate", cfg)
    out.add(write_ensemble_csv(ens, out.path("_paths.csv")))
    return out.finish(
        {
            "control": cfg.control.model_dump(mode="json"),
            "estimate": estimate_json(est),
            "negative_fraction": float(np.mean(ens.min_values < 0.0)),
            "mean_negative_part": float(np.mean(np.maximum(-ens.terminal_values, 0.0))),
        }
    )


class EstimatorParams(ConfigParams):
    method: Literal["constant", "bangbang"] = Field("constant", description="Control family")


def _field_for(cfg: RunConfig, negate: bool) -> ControlField:
    phi = cfg.payoff.negate() if negate else cfg.payoff
    sol = pde_solver.solve(cfg.problem(phi), cfg.spatial_grid(), cfg.grid.dt_cap)
    return ControlField.from_solution(sol)


@command
def upper(params: EstimatorParams) -> ArtifactResult:
    """Monte Carlo upper expectation: best constant control or the PDE feedback control."""
    cfg = _load(params)
    config = cfg.euler_config()
    if params.method == "constant":
        est, _ = simulator.upper_expectation_constant(
            cfg.payoff, cfg.params, cfg.band, config, 0.0, cfg.horizon, cfg.x0, cfg.euler.n_theta,
            threads=resolve_threads(),
        )
    else:
        est = simulator.upper_expectation_bangbang(
            cfg.payoff, cfg.params, cfg.band, config, 0.0, cfg.horizon, cfg.x0, _field_for(cfg, negate=False),
            threads=resolve_threads(),
        )
    return _Artifacts("upper", cfg).finish({"side": "upper", "method": params.method, "estimate": estimate_json(est)})


@command
def lower(params: EstimatorParams) -> ArtifactResult:
    """Monte Carlo lower expectation -E[-phi]."""
    cfg = _load(params)
    field = _field_for(cfg, negate=True) if params.method == "bangbang" else None
    est = simulator.lower_expectation(
        cfg.payoff, cfg.params, cfg.band, cfg.euler_config(), 0.0, cfg.horizon, cfg.x0,
        method=params.method, n_theta=cfg.euler.n_theta, field=field, threads=resolve_threads(),
    )
    return _Artifacts("lower", cfg).finish({"side": "lower", "method": params.method, "estimate": estimate_json(est)})


StudyName = Literal["increment_moment", "strong_error", "negativity", "initial_value_stability", "all"]


class ConvergeParams(ConfigParams):
    study: StudyName = Field("all", description="Which rate study to run")


@command
def converge(params: ConvergeParams) -> ArtifactResult:
    """Rate studies over the configured meshes; one `h,error` CSV per study."""
    cfg = _load(params)
    config = cfg.euler_config()
    meshes = cfg.default_meshes()
    threads = resolve_threads()
    args = (cfg.params, cfg.band, config, 0.0, cfg.horizon, cfg.x0)
    selected = ["increment_moment", "strong_error", "negativity", "initial_value_stability"]
    if params.study != "all":
        selected = [params.study]

    studies = {}
    for name in selected:
        if name == "increment_moment":
            studies[name] = analysis.increment_moment_study(*args, meshes, threads=threads)
        elif name == "strong_error":
            studies[name] = analysis.strong_error_study(*args, meshes, threads=threads)
        elif name == "negativity":
            studies[name] = analysis.negativity_diagnostic(*args, meshes, threads=threads)
        else:
            offsets = cfg.offsets or [0.1, 0.05, 0.025, 0.0125]
            studies[name] = analysis.initial_value_stability(*args, offsets, threads=threads)

    out = _Artifacts("converge", cfg)
    for name, study in studies.items():
        out.add(write_rate_csv(study, out.path(f"_{name}.csv")))
    return out.finish({"studies": {name: s.model_dump(mode="json") for name, s in studies.items()}})


class MarkovParams(ConfigParams):
    gamma: Optional[float] = Field(None, ge=0.0, description="Split length; overrides the config")


@command
def markov_check(params: MarkovParams) -> ArtifactResult:
    """Two-stage versus one-shot PDE solve split at t' - gamma."""
    cfg = _load(params)
    gamma = params.gamma if params.gamma is not None else cfg.gamma
    gamma = 0.5 * cfg.horizon if gamma is None else gamma
    grid = cfg.spatial_grid()
    problem = cfg.problem()
    discrepancy = analysis.markov_semigroup_check(problem, grid, gamma, cfg.grid.dt_cap)

    oracle_error = None
    query = MomentQuery(params=cfg.params, t=0.0, t_prime=cfg.horizon, x=cfg.x0)
    oracle = closed_form.oracle_for(cfg.params.regime, cfg.payoff.kind.value, query, cfg.band)
    if oracle is not None:
        direct = pde_solver.solve(problem, grid, cfg.grid.dt_cap)
        oracle_error = abs(pde_solver.evaluate(direct, 0.0, cfg.x0) - oracle)
    return _Artifacts("markov-check", cfg).finish(
        {"gamma": gamma, "discrepancy": discrepancy, "oracle_error": oracle_error, "nx": grid.nx, "x_max": grid.x_max}
    )


@command
def compare(params: ConfigParams) -> ArtifactResult:
    """Closed form, PDE and Monte Carlo routes side by side; fails when a checked route is out of tolerance."""
    cfg = _load(params)
    report = analysis.triangulation_report(
        cfg.problem(),
        cfg.spatial_grid(),
        cfg.euler_config(),
        cfg.x0,
        n_theta=cfg.euler.n_theta,
        dt_cap=cfg.grid.dt_cap,
        threads=resolve_threads(),
    )
    text = report_text(report)
    out = _Artifacts("compare", cfg)
    text_path = out.path(".txt")
    text_path.parent.mkdir(parents=True, exist_ok=True)
    text_path.write_text(text, encoding="utf-8")
    out.add(text_path)
    result = out.finish({"report": report.model_dump(mode="json")}, summary=text.rstrip("\n"))
    if not report.ok:
        failed = ", ".join(f"{r.route}/{r.side}" for r in report.routes if not r.ok)
        raise ToleranceError(f"routes out of tolerance: {failed}; report in {out.path('.json')}")
    return result


class CdfParams(ConfigParams):
    width: float = Field(0.05, gt=0.0, description="Ramp width of the smoothed indicator")


@command
def cdf(params: CdfParams) -> ArtifactResult:
    """Upper and lower distribution functions of X_{t'} from smoothed indicators."""
    cfg = _load(params)
    grid = cfg.spatial_grid()
    thresholds = cfg.thresholds or [float(a) for a in np.linspace(0.0, 0.5 * grid.x_max, 11)]
    points = pde_solver.distribution_function(cfg.problem(), grid, cfg.x0, thresholds, params.width, cfg.grid.dt_cap)
    out = _Artifacts("cdf", cfg)
    out.add(write_cdf_csv(points, out.path(".csv")))
    return out.finish({"x0": cfg.x0, "width": params.width, "points": [p.model_dump() for p in points]})


def handler(event, context):
    return runtime_handler(event, context)
