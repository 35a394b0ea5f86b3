"""Experiment configuration (YAML or JSON, schema version 1, unknown keys rejected)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .cdm import CdmKind
from .geometry import GridSpec
from .planner import ACCELERATORS, HARDENING, Heuristic
from .robot import ArmSpec
from .store import dumps_json, sha256_text

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArmConfig(_Strict):
    link_lengths: list[float] = Field(default=[14.0, 12.0, 9.0, 7.0], min_length=1, max_length=7)
    link_radius: float = Field(default=5.0, gt=0)
    joint_limits: Optional[list[tuple[float, float]]] = None
    base_position: Optional[tuple[float, float, float]] = None

    def build(self) -> ArmSpec:
        return ArmSpec(
            tuple(self.link_lengths),
            self.link_radius,
            tuple(tuple(j) for j in self.joint_limits) if self.joint_limits else (),
            tuple(self.base_position) if self.base_position else None,
        )


class GridConfig(_Strict):
    resolution: int = 16
    physical_extent: Optional[float] = Field(default=None, gt=0)  # default: twice the arm reach

    @field_validator("resolution")
    @classmethod
    def _pow2(cls, v):
        if v < 2 or v & (v - 1):
            raise ValueError("resolution must be a power of two >= 2")
        return v


class MotionSetConfig(_Strict):
    n_poses: int = Field(default=512, ge=2)
    n_motions: int = Field(default=1024, ge=1)
    steps: Optional[int] = Field(default=None, ge=2)


class FiConfig(_Strict):
    modes: list[Literal["cef_aware", "exhaustive", "uniform_statistical"]] = ["cef_aware", "exhaustive", "uniform_statistical"]
    M: Union[int, Literal["auto"]] = 40
    confidence: float = Field(default=0.95, gt=0, lt=1)
    margin: float = Field(default=0.025, gt=0)
    scenario_count: int = Field(default=1000, ge=1)
    uniform_samples: int = Field(default=100_000, ge=1)
    exhaustive_max_runs: float = 5e9
    plan_density: Literal["D1", "D2", "D3", "D4"] = "D4"
    engine: Literal["fast", "simulate"] = "fast"
    write_bit_csv: bool = False

    @field_validator("M")
    @classmethod
    def _m(cls, v):
        if isinstance(v, int) and v < 1:
            raise ValueError("M must be >= 1 or 'auto'")
        return v


class PlannerConfig(_Strict):
    heuristics: list[str] = [h.value for h in Heuristic]
    fractions: list[float] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    hardening: list[str] = ["RCC", "SEUT", "TMR", "ECC"]
    accelerators: list[str] = ["A1", "A2", "A3", "A3_scaled", "A4"]
    uniform_seeds: int = Field(default=5, ge=1)
    access_scenarios: int = Field(default=200, ge=1)

    @field_validator("heuristics")
    @classmethod
    def _h(cls, v):
        for h in v:
            Heuristic.parse(h)
        return v

    @field_validator("fractions")
    @classmethod
    def _f(cls, v):
        if any(not 0.0 <= f <= 1.0 for f in v):
            raise ValueError("fractions must lie in [0, 1]")
        return sorted(set(v))

    @field_validator("hardening")
    @classmethod
    def _hm(cls, v):
        bad = [t for t in v if t.upper() not in HARDENING]
        if bad:
            raise ValueError(f"unknown hardening techniques {bad}")
        return [t.upper() for t in v]

    @field_validator("accelerators")
    @classmethod
    def _acc(cls, v):
        bad = [a for a in v if a not in ACCELERATORS]
        if bad:
            raise ValueError(f"unknown accelerators {bad}")
        return v


class FitConfig(_Strict):
    fit_raw: float = Field(default=20.49, gt=0)


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = 1
    seed: int
    out_dir: str = "runs/desk"
    jobs: int = Field(default=1, ge=1)
    arm: ArmConfig = ArmConfig()
    grid: GridConfig = GridConfig()
    motion_set: MotionSetConfig = MotionSetConfig()
    kinds: list[str] = [k.value for k in CdmKind]
    density_classes: list[Literal["D1", "D2", "D3", "D4"]] = ["D1", "D2", "D3", "D4"]
    fi: FiConfig = FiConfig()
    planner: PlannerConfig = PlannerConfig()
    fit: FitConfig = FitConfig()

    @field_validator("kinds")
    @classmethod
    def _kinds(cls, v):
        return [CdmKind.parse(k).value for k in v]

    @model_validator(mode="after")
    def _cross(self):
        arm = self.arm_spec()
        arm.check_fits(self.grid_spec())
        ms = self.motion_set
        if ms.n_motions > ms.n_poses * (ms.n_poses - 1) // 2:
            raise ValueError(
                f"motion_set.n_motions={ms.n_motions} exceeds the {ms.n_poses * (ms.n_poses - 1) // 2} "
                f"edges {ms.n_poses} poses allow"
            )
        if self.fi.plan_density not in self.density_classes:
            raise ValueError("fi.plan_density must be one of density_classes")
        return self

    def arm_spec(self) -> ArmSpec:
        return self.arm.build()

    def grid_spec(self) -> GridSpec:
        extent = self.grid.physical_extent or 2.0 * sum(self.arm.link_lengths)
        return GridSpec(self.grid.resolution, extent)

    def kind_list(self) -> list[CdmKind]:
        return [CdmKind.parse(k) for k in self.kinds]

    def canonical(self) -> str:
        # out_dir and jobs do not affect results, so they stay out of the digest
        return dumps_json(self.model_dump(mode="json", exclude={"out_dir", "jobs"}))

    def digest(self) -> str:
        return sha256_text(self.canonical())


def _format_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read YAML/JSON (or use defaults when ``path`` is None) and apply overrides."""
    data: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text) or {}
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"{path}: cannot parse: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_error(e)) from None
    except ValueError as e:
        raise ConfigError(str(e)) from None
