"""FastAPI service wrapping the experiment runner.

Endpoints are synchronous; a desk-scale training run completes in seconds,
so train/sweep/ablate simply block until the artifacts are written. Domain
errors are mapped onto a uniform error body whose ``kind`` field tells
clients whether the problem was the config, the filesystem, or numerics.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import ValidationError

from .. import __version__
from ..checkpoint import CheckpointError
from ..config import ConfigError
from ..data import CsvFormatError
from ..numcore import ContractViolation, NumericFailure
from .. import experiments
from .schemas import (
    AblateRequest,
    AblateResponse,
    EvalRequest,
    EvalResponse,
    HealthResponse,
    PredictRequest,
    PredictResponse,
    SweepRequest,
    SweepResponse,
    TrainRequest,
    TrainResponse,
)

app = FastAPI(title="advmem", version=__version__)

_ERROR_STATUS = {"config": 400, "io": 404, "numeric": 500, "internal": 500}


def _error_response(kind: str, detail: str) -> JSONResponse:
    return JSONResponse(
        status_code=_ERROR_STATUS[kind],
        content={"error": {"kind": kind, "detail": detail}},
    )


@app.exception_handler(RequestValidationError)
async def _on_request_validation(request: Request, exc: RequestValidationError):
    detail = "; ".join(
        ".".join(str(p) for p in err["loc"]) + ": " + err["msg"] for err in exc.errors()
    )
    return _error_response("config", detail)


@app.exception_handler(Exception)
async def _on_exception(request: Request, exc: Exception):
    if isinstance(exc, (ConfigError, ContractViolation, ValidationError, ValueError)):
        return _error_response("config", str(exc))
    if isinstance(exc, (FileNotFoundError, CsvFormatError, CheckpointError, OSError)):
        return _error_response("io", str(exc))
    if isinstance(exc, NumericFailure):
        return _error_response("numeric", str(exc))
    return _error_response("internal", f"{type(exc).__name__}: {exc}")


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest) -> TrainResponse:
    summary = experiments.run_experiment(req.config, req.out_dir)
    out = req.out_dir
    return TrainResponse(
        summary=summary,
        out_dir=out,
        metrics_path=f"{out}/metrics.csv",
        checkpoint_path=f"{out}/checkpoint.json",
        summary_path=f"{out}/summary.json",
    )


@app.post("/eval", response_model=EvalResponse)
def evaluate(req: EvalRequest) -> EvalResponse:
    result = experiments.evaluate_checkpoint(
        req.checkpoint_path,
        data_spec=req.data_spec,
        csv_path=req.csv_path,
        use_memory=req.use_memory,
        out_path=req.out_path,
    )
    return EvalResponse(**result)


@app.post("/predict", response_model=PredictResponse)
def predict(req: PredictRequest) -> PredictResponse:
    result = experiments.predict_with_checkpoint(
        req.checkpoint_path, req.inputs, use_memory=req.use_memory
    )
    return PredictResponse(**result)


@app.post("/sweep", response_model=SweepResponse)
def sweep(req: SweepRequest) -> SweepResponse:
    result = experiments.run_sweep(req.config, req.parameter, req.values, req.out_dir)
    return SweepResponse(**result)


@app.post("/ablate", response_model=AblateResponse)
def ablate(req: AblateRequest) -> AblateResponse:
    result = experiments.run_ablate(req.config, req.out_dir)
    return AblateResponse(**result)
