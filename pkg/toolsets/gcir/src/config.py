"""Run configuration: one JSON (or YAML) document, validated before anything runs."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gcir.core import CirParams, GFunction, Payoff
from gcir.errors import ConfigError, DomainError
from gcir.pde_solver import PdeProblem, SpatialGrid, cfl_dt, default_x_max
from gcir.simulator import ControlKind, EulerConfig, VolatilityControl
from gcir.streams import MAX_SEED
from gcir_runtime import validation_message

_STRICT = ConfigDict(frozen=True, extra="forbid")


class GridSpec(BaseModel):
    model_config = _STRICT

    x_max: Optional[float] = Field(None, gt=0.0, description="truncation; derived from the parameters when omitted")
    nx: int = Field(501, ge=16)
    dt_cap: Optional[float] = Field(None, gt=0.0)


class EulerSpec(BaseModel):
    model_config = _STRICT

    n_steps: int = Field(1024, ge=1)
    n_paths: int = Field(100_000, ge=1)
    seed: int = Field(0, ge=0, le=MAX_SEED)
    n_theta: int = Field(5, ge=2)
    full_truncation: bool = False


class ControlSpec(BaseModel):
    model_config = _STRICT

    kind: ControlKind = ControlKind.CONSTANT
    theta: Optional[float] = Field(None, ge=0.0, description="defaults to sigma_hi")
    breakpoints: Tuple[float, ...] = ()
    thetas: Tuple[float, ...] = ()


class OutputSpec(BaseModel):
    model_config = _STRICT

    prefix: str = Field("gcir", min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")


class RunConfig(BaseModel):
    """Everything a command needs. Times are absolute; the model is time homogeneous,
    so PDE and Monte Carlo routes run on [0, t_prime - t]."""

    model_config = _STRICT

    params: CirParams
    band: GFunction
    payoff: Payoff = Field(default_factory=Payoff.identity)
    t: float = Field(0.0, ge=0.0)
    t_prime: float = Field(..., gt=0.0)
    x0: float = Field(..., ge=0.0)
    grid: GridSpec = Field(default_factory=GridSpec)
    euler: EulerSpec = Field(default_factory=EulerSpec)
    control: ControlSpec = Field(default_factory=ControlSpec)
    meshes: Optional[List[float]] = Field(None, description="strictly decreasing step sizes for rate studies")
    offsets: Optional[List[float]] = Field(None, description="start-value offsets for the stability study")
    gamma: Optional[float] = Field(None, ge=0.0)
    thresholds: Optional[List[float]] = Field(None, description="distribution function abscissae")
    outputs: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _check_run(self) -> "RunConfig":
        if self.t_prime <= self.t:
            raise ValueError("t_prime must exceed t")
        if self.gamma is not None and self.gamma > self.horizon:
            raise ValueError(f"gamma must lie in [0, {self.horizon}]")
        if self.control.kind is ControlKind.BANG_BANG:
            raise ValueError("bang_bang controls are derived from the PDE; use the upper/lower commands")
        control = self.volatility_control()
        try:
            control.check_band(self.band)
        except DomainError as e:
            raise ValueError(f"control: {e}") from e
        if self.grid.dt_cap is not None:
            limit = cfl_dt(self.spatial_grid(), self.params, self.band)
            if self.grid.dt_cap > limit:
                raise ValueError(f"grid.dt_cap={self.grid.dt_cap} exceeds the CFL limit {limit:.6g}")
        return self

    @property
    def horizon(self) -> float:
        return self.t_prime - self.t

    def spatial_grid(self) -> SpatialGrid:
        x_max = self.grid.x_max if self.grid.x_max is not None else default_x_max(self.params, self.band, self.x0)
        return SpatialGrid(x_max=x_max, nx=self.grid.nx)

    def problem(self, payoff: Optional[Payoff] = None) -> PdeProblem:
        return PdeProblem(params=self.params, gf=self.band, payoff=payoff or self.payoff, t_prime=self.horizon)

    def euler_config(self, n_steps: Optional[int] = None) -> EulerConfig:
        e = self.euler
        return EulerConfig(
            n_steps=n_steps or e.n_steps, n_paths=e.n_paths, seed=e.seed, full_truncation=e.full_truncation
        )

    def volatility_control(self) -> VolatilityControl:
        c = self.control
        if c.kind is ControlKind.PIECEWISE_CONSTANT:
            return VolatilityControl(kind=c.kind, breakpoints=c.breakpoints, thetas=c.thetas)
        return VolatilityControl.constant(self.band.sigma_hi if c.theta is None else c.theta)

    def default_meshes(self) -> List[float]:
        return self.meshes or [self.horizon / 2**k for k in range(4, 9)]

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        euler = EulerSpec.model_validate({**self.euler.model_dump(), "seed": seed})
        return self.model_copy(update={"euler": euler})

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def _parse_document(path: Path, text: str) -> Any:
    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            return yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark is not None else str(path)
            raise ConfigError(f"{where}: {getattr(e, 'problem', None) or e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e


def parse_config(data: Any, source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as ve:
        raise ConfigError(f"{source}: {validation_message(ve)}") from ve


def load_config(path: str | Path, seed_override: Optional[int] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    return parse_config(_parse_document(path, text), str(path)).with_seed(seed_override)


def config_schema() -> Dict[str, Any]:
    return RunConfig.model_json_schema()
