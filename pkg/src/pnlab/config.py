"""Run configuration: YAML documents validated against a strict schema.

Every section rejects unknown keys.  Defaults are filled in at parse time so
that the echoed configuration is complete; the run id is a hash of that
echo, hence identical configurations share the same id.
"""
from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import InvalidConfigurationError

SUBCOMMANDS = ("operator-check", "layer", "psi", "cell", "hbar-table", "orowan",
               "ansatz-residual", "homogenize-compare")

Rational = Union[int, float, str]


def _is_pow2(n: int) -> bool:
    return n >= 8 and n & (n - 1) == 0


def _rational(v) -> str:
    """Normalise a rational given as int, float or 'a/b' to its 'a/b' string."""
    if isinstance(v, bool):
        raise ValueError("expected a rational number")
    if isinstance(v, float):
        fr = Fraction(v).limit_denominator(4096)
        if abs(float(fr) - v) > 1e-12:
            raise ValueError(f"{v!r} is not a small-denominator rational")
    else:
        fr = Fraction(str(v))
    return str(fr)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


class PotentialConfig(Strict):
    coefficients: list[float] = Field(default_factory=lambda: [1.0 / (4 * math.pi**2)],
                                      min_length=1)


class ForcingModeConfig(Strict):
    j: int
    k: int
    a: float
    theta: float = 0.0


class ForcingConfig(Strict):
    modes: list[ForcingModeConfig] = Field(default_factory=list)


class KernelConfig(Strict):
    g0: float = Field(1.0 / math.pi, gt=0)
    r: float = Field(1.0, gt=0)


class NumericsConfig(Strict):
    n: int = 256
    dt: Optional[float] = Field(None, gt=0)
    T: float = Field(200.0, gt=0)
    resolution: int = Field(16, ge=2)
    tol: float = Field(1e-3, gt=0)
    line_radius: float = Field(100.0, gt=0)
    line_n: int = Field(4001, ge=64)

    @field_validator("n")
    @classmethod
    def _grid(cls, v):
        if not _is_pow2(v):
            raise ValueError(f"grid node count n must be a power of two >= 8, got {v}")
        return v


class OperatorCheckParams(Strict):
    period: float = Field(1.0, gt=0)
    modes: list[int] = Field(default_factory=lambda: list(range(1, 9)))
    quadrature_n: list[int] = Field(default_factory=lambda: [256, 512, 1024])
    quadrature_r: float = Field(0.25, gt=0)

    @field_validator("quadrature_n")
    @classmethod
    def _grids(cls, v):
        for n in v:
            if not _is_pow2(n):
                raise ValueError(f"quadrature grid n must be a power of two >= 8, got {n}")
        return v


class LayerParams(Strict):
    closed_form: bool = True
    window: float = Field(50.0, gt=0)
    samples: int = Field(201, ge=2)


class PsiParams(Strict):
    L0: float = 1.0
    closed_form_layer: bool = True
    samples: int = Field(201, ge=2)


class CellParams(Strict):
    p: Rational = 0
    L: float = 1.0

    @field_validator("p")
    @classmethod
    def _p(cls, v):
        return _rational(v)


class HbarTableParams(Strict):
    p: list[Rational] = Field(default_factory=lambda: ["0", "1/4", "1/2", "1", "2"])
    L: list[float] = Field(default_factory=lambda: [-2.0, -4 / 3, -2 / 3, 0.0, 2 / 3, 4 / 3, 2.0])

    @field_validator("p")
    @classmethod
    def _ps(cls, v):
        return [_rational(x) for x in v]


class OrowanParams(Strict):
    deltas: list[Rational] = Field(default_factory=lambda: ["1/8", "1/16", "1/32"])
    p0: Rational = 1
    L0: float = 1.0

    @field_validator("deltas")
    @classmethod
    def _ds(cls, v):
        return [_rational(x) for x in v]

    @field_validator("p0")
    @classmethod
    def _p0(cls, v):
        return _rational(v)


class AnsatzParamsConfig(Strict):
    deltas: list[float] = Field(default_factory=lambda: [0.25, 0.125, 0.0625])
    p0: float = 1.0
    L: float = 1.0
    truncation_factor: float = Field(8.0, gt=0)
    truncation_floor: int = Field(1, ge=1)
    points: int = Field(401, ge=3)


class HomogenizeParams(Strict):
    eps: list[Rational] = Field(default_factory=lambda: ["1/4", "1/8", "1/16"])
    p: Rational = "1/2"
    amplitude: float = 0.1
    T: float = Field(1.0, gt=0)
    hj_n: int = 256
    checkpoints: int = Field(4, ge=1)
    table: Optional[str] = None
    table_p: list[Rational] = Field(default_factory=lambda: [f"{k}/8" for k in range(-5, 15)])
    table_L: list[float] = Field(default_factory=lambda: [k / 8 for k in range(-8, 9)])
    comparison_trials: int = Field(10, ge=0)
    comparison_steps: int = Field(1000, ge=1)

    @field_validator("eps", "table_p")
    @classmethod
    def _list(cls, v):
        return [_rational(x) for x in v]

    @field_validator("p")
    @classmethod
    def _p(cls, v):
        return _rational(v)

    @field_validator("hj_n")
    @classmethod
    def _grid(cls, v):
        if not _is_pow2(v):
            raise ValueError(f"homogenized grid hj_n must be a power of two >= 8, got {v}")
        return v


PARAMS = {
    "operator-check": OperatorCheckParams,
    "layer": LayerParams,
    "psi": PsiParams,
    "cell": CellParams,
    "hbar-table": HbarTableParams,
    "orowan": OrowanParams,
    "ansatz-residual": AnsatzParamsConfig,
    "homogenize-compare": HomogenizeParams,
}


class RunConfig(Strict):
    subcommand: Literal[SUBCOMMANDS]
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    forcing: ForcingConfig = Field(default_factory=ForcingConfig)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    numerics: NumericsConfig = Field(default_factory=NumericsConfig)
    params: dict = Field(default_factory=dict)
    workers: int = Field(1, ge=1)

    def default_dt(self) -> float:
        """Subcommand-specific default step.

        Cell runs use the cell rule at the largest |L| requested, orowan uses
        0.01, and for homogenize-compare the value is the step per unit eps.
        Otherwise 0.1 / ||W''||.
        """
        from .effective_hamiltonian import CellSpec
        from .physics_models import Forcing, PeriodicPotential

        pot = PeriodicPotential(tuple(self.potential.coefficients))
        if self.subcommand == "orowan":
            return 0.01
        if self.subcommand in ("cell", "hbar-table"):
            Ls = self.params["L"] if self.subcommand == "hbar-table" else [self.params["L"]]
            forcing = Forcing(tuple(m.model_dump() for m in self.forcing.modes))
            Lmax = max(abs(float(L)) for L in Ls)
            return CellSpec(p=0, L=Lmax, potential=pot, forcing=forcing).time_step()
        return 0.1 / pot.w2_sup

    def typed_params(self):
        return PARAMS[self.subcommand].model_validate(self.params)

    def echo(self) -> dict:
        return self.model_dump(mode="json")

    @property
    def run_id(self) -> str:
        """Hash of the echo; the worker count is excluded since it does not change results."""
        echo = self.echo()
        echo.pop("workers")
        payload = json.dumps(echo, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _format_errors(exc: ValidationError, prefix: str = "") -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join([prefix] * bool(prefix) + [str(p) for p in err["loc"]]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def load_config(data: dict) -> RunConfig:
    """Validate a config mapping; the params section is checked against its subcommand."""
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfigurationError(_format_errors(exc)) from None
    try:
        cfg.params = cfg.typed_params().model_dump()
    except ValidationError as exc:
        raise InvalidConfigurationError(_format_errors(exc, prefix="params")) from None
    if cfg.numerics.dt is None:
        cfg.numerics.dt = cfg.default_dt()
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run configuration."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfigurationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise InvalidConfigurationError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidConfigurationError(f"{path}: top level must be a mapping")
    return load_config(data)
