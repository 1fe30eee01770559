"""Request and response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..config import ExperimentConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorInfo(BaseModel):
    kind: Literal["config", "io", "numeric", "internal"]
    detail: str


class TrainRequest(BaseModel):
    config: ExperimentConfig
    out_dir: str


class TrainResponse(BaseModel):
    summary: dict
    out_dir: str
    metrics_path: str
    checkpoint_path: str
    summary_path: str


class EvalRequest(BaseModel):
    checkpoint_path: str
    data_spec: Optional[dict] = None
    csv_path: Optional[str] = None
    use_memory: bool = True
    out_path: Optional[str] = None


class DomainAccuracy(BaseModel):
    domain: str
    n: int
    accuracy: float


class EvalResponse(BaseModel):
    use_memory: bool
    domains: list[DomainAccuracy]


class PredictRequest(BaseModel):
    checkpoint_path: str
    inputs: list[list[float]]
    use_memory: bool = True


class PredictResponse(BaseModel):
    classes: list[int]
    logits: list[list[float]]


class SweepRequest(BaseModel):
    config: ExperimentConfig
    parameter: Literal["lambda_aug", "gamma", "beta", "r_m"]
    values: list[float] = Field(min_length=1)
    out_dir: str


class SweepResponse(BaseModel):
    rows: list[dict]
    csv_path: str


class AblateRequest(BaseModel):
    config: ExperimentConfig
    out_dir: str


class AblateResponse(BaseModel):
    rows: list[dict]
    csv_path: str
