"""Experiment configuration schema and JSON loading.

The same pydantic models validate config files read by the CLI and request
bodies received by the service, so field-level diagnostics are identical on
both paths.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from .data import DomainSpec, default_domain_specs
from .membank import LangevinConfig
from .trainer import ModelDims, OptimizerSettings, TrainConfig


class ConfigError(ValueError):
    """Config document failed validation; message lists offending fields."""


class DomainSpecModel(BaseModel):
    name: str
    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    scale: tuple[float, float] = (1.0, 1.0)
    noise_std: float = Field(default=0.0, ge=0.0)
    warp: float = 0.0

    @field_validator("scale")
    @classmethod
    def _positive_scale(cls, v):
        if any(s <= 0 for s in v):
            raise ValueError("scale entries must be > 0")
        return v

    def to_spec(self) -> DomainSpec:
        return DomainSpec(
            name=self.name,
            rotation_deg=self.rotation_deg,
            translation=self.translation,
            scale=self.scale,
            noise_std=self.noise_std,
            warp=self.warp,
        )


class SyntheticDataSpec(BaseModel):
    kind: Literal["synthetic"] = "synthetic"
    geometry: Literal["two_moons", "gaussian_blobs"] = "two_moons"
    n_train: int = Field(default=600, ge=2)
    n_test_per_domain: int = Field(default=400, ge=2)
    d_x: int = Field(default=10, ge=2)
    n_classes: int = Field(default=2, ge=2)
    geometry_noise: float = Field(default=0.1, ge=0.0)
    embed_noise: float = Field(default=0.05, ge=0.0)
    domains: Optional[list[DomainSpecModel]] = None

    def domain_specs(self) -> list:
        if self.domains is None:
            return default_domain_specs()
        return [d.to_spec() for d in self.domains]


class CsvDataSpec(BaseModel):
    kind: Literal["csv"] = "csv"
    train_path: str
    test_paths: dict[str, str] = Field(default_factory=dict)
    n_classes: int = Field(default=0, ge=0)  # 0 -> infer from the training file


class ModelSpec(BaseModel):
    d_z: int = Field(default=8, ge=1)
    d_h: int = Field(default=8, ge=1)
    hidden: list[int] = Field(default_factory=lambda: [24, 24])
    activation: Literal["tanh", "identity"] = "tanh"

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, v):
        if any(h < 1 for h in v):
            raise ValueError("hidden widths must be >= 1")
        return v

    def to_dims(self) -> ModelDims:
        return ModelDims(
            d_z=self.d_z, d_h=self.d_h, hidden=tuple(self.hidden), activation=self.activation
        )


class LangevinSpec(BaseModel):
    steps: int = Field(default=10, ge=1)
    eta0: float = Field(default=0.1, gt=0.0)
    noise_enabled: bool = True

    def to_config(self) -> LangevinConfig:
        return LangevinConfig(steps=self.steps, eta0=self.eta0, noise_enabled=self.noise_enabled)


class OptimizerSpec(BaseModel):
    learning_rate: float = Field(default=0.05, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    schedule: Literal["constant", "step", "cosine"] = "constant"
    decay_epoch: Optional[int] = Field(default=None, ge=0)
    decay_factor: float = Field(default=0.1, gt=0.0, le=1.0)

    def to_settings(self) -> OptimizerSettings:
        return OptimizerSettings(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            schedule=self.schedule,
            decay_epoch=self.decay_epoch,
            decay_factor=self.decay_factor,
        )


class TrainSpec(BaseModel):
    lambda_aug: float = Field(default=1.0, ge=0.0)
    beta: float = Field(default=0.5, ge=0.0, le=1.0)
    gamma: float = Field(default=0.7, gt=0.0, le=1.0)
    r_m: float = Field(default=0.1, gt=0.0, le=1.0)
    warmup_epochs: int = Field(default=2, ge=0)
    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=32, ge=1)
    ablation: Literal["full", "no_aug_loss", "no_adversarial", "no_concat", "no_test_memory"] = "full"
    kmeans_k: int = Field(default=0, ge=0)
    label_grad_through_alpha: bool = True


class ExperimentConfig(BaseModel):
    seed: int = 0
    data: Union[SyntheticDataSpec, CsvDataSpec] = Field(
        default_factory=SyntheticDataSpec, discriminator="kind"
    )
    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    langevin: LangevinSpec = Field(default_factory=LangevinSpec)
    optimizer: OptimizerSpec = Field(default_factory=OptimizerSpec)
    out_dir: Optional[str] = None

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            lambda_aug=t.lambda_aug,
            beta=t.beta,
            gamma=t.gamma,
            r_m=t.r_m,
            warmup_epochs=t.warmup_epochs,
            epochs=t.epochs,
            batch_size=t.batch_size,
            ablation=t.ablation,
            langevin=self.langevin.to_config(),
            kmeans_k=t.kmeans_k,
            seed=self.seed,
            label_grad_through_alpha=t.label_grad_through_alpha,
        )


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None


def load_config_file(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: config root must be a JSON object")
    return config_from_dict(raw)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
