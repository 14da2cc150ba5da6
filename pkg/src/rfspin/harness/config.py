"""Experiment configuration, seed derivation and replay manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .. import __version__
from ..models import KINDS, ModelSpec

EXPERIMENTS = ("fluc-decay", "weighted-fluc", "mag-decay", "mw-gap", "stability-suite", "partition-scan",
               "model-facts", "alpha")
CSV_SCHEMA_VERSION = 1
MIN_REPLICAS = 30


class ConfigError(ValueError):
    pass


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str = "rfim"
    d: int = 2
    beta: float = 1.0
    lam: float = 1.0
    h: list[float] = Field(default_factory=lambda: [0.0])
    q: int = 3
    n: int = 2
    n_states: int = 8
    coupling: str = "neg_dot"
    antiferro: bool = False

    @field_validator("kind")
    @classmethod
    def _known(cls, v):
        if v not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        return v

    def to_spec(self) -> ModelSpec:
        data = self.model_dump()
        if self.kind != "potts":
            data.pop("q")
        if self.kind != "on":
            data.pop("n")
        if self.kind != "clock":
            data.pop("n_states")
        return ModelSpec.from_dict(data)


class CriterionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["fluc_threshold", "weighted_fluc_threshold", "field_quantile"] = "fluc_threshold"
    delta: float = Field(0.5, gt=0)
    k: int = Field(2, ge=2)
    l_max: dict[int, int] = Field(default_factory=dict)
    density_floor_exponent: float = 0.25
    component: int = 0


class McmcConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sweeps: int = Field(2000, ge=10)
    burn_in: int = Field(500, ge=0)
    chains: int = Field(8, ge=2)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: Literal[EXPERIMENTS]
    model: ModelConfig = Field(default_factory=ModelConfig)
    L: list[int] = Field(default_factory=lambda: [2, 3, 4])
    replicas: int = MIN_REPLICAS
    seed: int = 0
    boundary: Literal["fixed", "free", "periodic"] = "fixed"
    weight: Literal["constant", "checkerboard", "zero"] = "constant"
    random_boundaries: int = Field(8, ge=0)
    criterion: CriterionConfig = Field(default_factory=CriterionConfig)
    mcmc: McmcConfig = Field(default_factory=McmcConfig)
    ell: list[int] = Field(default_factory=lambda: [2])
    window: int | None = None
    exact_cap: int = Field(2**20, ge=1)
    workers: int = Field(1, ge=1)
    output_dir: str = "out"

    @field_validator("L")
    @classmethod
    def _positive(cls, v):
        if not v or any(x < 1 for x in v):
            raise ValueError("L values must be positive")
        return v

    @field_validator("replicas")
    @classmethod
    def _enough(cls, v):
        if v < MIN_REPLICAS:
            raise ValueError(f"reported means need at least {MIN_REPLICAS} replicas")
        return v

    @model_validator(mode="after")
    def _model_valid(self):
        try:
            self.model.to_spec()
        except (ValueError, TypeError) as exc:
            raise ValueError(f"invalid model: {exc}") from None
        return self

    @property
    def spec(self) -> ModelSpec:
        return self.model.to_spec()

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)


def replica_seed(base: int, *keys: int) -> int:
    """Seed for one (L, replica) cell; independent of worker count and run order."""
    return int(np.random.SeedSequence([int(base), *[int(k) for k in keys]]).generate_state(1, np.uint32)[0])


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(config: ExperimentConfig, out_dir, outputs: list[str]) -> Path:
    out = Path(out_dir)
    manifest = {
        "package_version": __version__,
        "csv_schema": CSV_SCHEMA_VERSION,
        "config": json.loads(config.to_json()),
        "outputs": {name: sha256_file(out / name) for name in outputs},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def read_manifest(path) -> tuple[ExperimentConfig, dict]:
    try:
        data = json.loads(Path(path).read_text())
        return parse_config(data["config"]), data["outputs"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad manifest {path}: {exc}") from None
