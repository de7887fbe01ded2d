"""JSON experiment configuration.

Every section is a strict model: unknown keys are rejected and each
constraint violation is reported with the dotted path of the offending
field, for example ``confidence.delta``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .presets import preset_names

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Raised for unreadable, malformed or invalid configuration files."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class KernelConfig(_Strict):
    family: Literal["squared-exponential"] = "squared-exponential"
    signal_variance: float = Field(1.0, gt=0)
    lengthscale: float = Field(1.0, gt=0)


class ConfidenceSection(_Strict):
    delta: float = Field(0.1, gt=0, lt=1)
    # None means "derive from the closed-form truth norm": B = norm / 0.9.
    B_d: Optional[float] = Field(None, gt=0)
    B_d2: Optional[float] = Field(None, gt=0)
    R: float = Field(1e-4, ge=0)
    noise_variance: float = Field(0.01, gt=0)


class ProblemConfig(_Strict):
    preset: str = "linear-1d"
    K_H: float = Field(1.0, gt=0)
    K_V: float = Field(1.0, gt=0)
    u_bounds: Tuple[float, float] = (-2.0, 2.0)
    L_pi: float = Field(5.0, gt=0)
    eclf_floor: float = Field(0.01, ge=0)
    h0: float = 0.8

    @model_validator(mode="after")
    def _check(self):
        if self.preset not in preset_names():
            raise ValueError(f"preset must be one of {preset_names()}")
        if not self.u_bounds[0] <= self.u_bounds[1]:
            raise ValueError("u_bounds must satisfy lower <= upper")
        return self


class TruthConfig(_Strict):
    mode: Literal["closed-form", "rkhs-sample"] = "closed-form"
    name: Literal["sine-bumps", "zero"] = "sine-bumps"
    amplitude: float = 0.3
    m: int = Field(5, ge=1)
    # bump width in units of the kernel lengthscale
    width_factor: float = Field(1.5, gt=0)


class MeasurementConfig(_Strict):
    mode: Literal["direct", "finite-difference"] = "direct"
    dt: float = Field(1e-3, gt=0)


class InitialConfig(_Strict):
    safe_radius: float = Field(0.1, ge=0)
    policy_gain: float = 1.0


class ExperimentConfig(_Strict):
    domain: Tuple[float, float] = (-1.0, 1.0)
    tau: float = Field(0.01, gt=0)
    kernel: KernelConfig = KernelConfig()
    confidence: ConfidenceSection = ConfidenceSection()
    problem: ProblemConfig = ProblemConfig()
    truth: TruthConfig = TruthConfig()
    measurement: MeasurementConfig = MeasurementConfig()
    initial: InitialConfig = InitialConfig()
    rounds: int = Field(20, ge=0)
    dt: float = Field(1e-3, gt=0)
    T: float = Field(5.0, gt=0)
    x0: float = 0.5
    seed: int = Field(0, ge=0)
    rollout_safe_set: bool = True

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError("domain must satisfy lower < upper")
        if not lo <= self.x0 <= hi:
            raise ValueError("x0 must lie in the domain")
        if self.truth.mode == "rkhs-sample" and self.confidence.B_d is None:
            raise ValueError("confidence.B_d is required for truth mode 'rkhs-sample'")
        return self


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(f"invalid config: {_format_errors(err)}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data)
