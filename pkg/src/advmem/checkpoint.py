"""Checkpoint persistence.

Checkpoints are JSON documents holding the config snapshot, every parameter
tensor, the memory bank, optimizer momentum buffers, and the exact RNG
stream positions, so a restored run continues bit-for-bit where it stopped.
Floats are written with Python's shortest round-trip decimal encoding
(exact for binary64). Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict
from .membank import MemoryBank
from .model import EncoderParams, HeadParams, OptimizerState, ProjectionParams
from .numcore import RngStream
from .trainer import TrainState

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint document missing, malformed, or version-incompatible."""


def write_json_atomic(path, payload: dict) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=p.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _opt_payload(opt: OptimizerState) -> dict:
    return {
        "base_lr": opt.base_lr,
        "momentum": opt.momentum,
        "schedule": opt.schedule,
        "decay_epoch": opt.decay_epoch,
        "decay_factor": opt.decay_factor,
        "total_epochs": opt.total_epochs,
        "epoch": opt.epoch,
        "buffers": {k: v.tolist() for k, v in opt.buffers.items()},
    }


def save_checkpoint(path, config: ExperimentConfig, state: TrainState) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config.model_dump(mode="json"),
        "encoder": {
            "activation": state.encoder.activation,
            "weights": [w.tolist() for w in state.encoder.weights],
            "biases": [b.tolist() for b in state.encoder.biases],
        },
        "head": {
            "weight": state.head.weight.tolist(),
            "bias": state.head.bias.tolist(),
        },
        "projections": {
            "w_query": state.proj.w_query.tolist(),
            "w_key": state.proj.w_key.tolist(),
        },
        "bank": None if state.bank is None else {
            "features": state.bank.features.tolist(),
            "labels": state.bank.labels.tolist(),
        },
        "warmup_done": state.warmup_done,
        "epochs_done": state.epochs_done,
        "optimizer": _opt_payload(state.opt),
        "rng": {
            "shuffle": state.rng_shuffle.state(),
            "memory": state.rng_memory.state(),
        },
    }
    write_json_atomic(path, payload)


def _buffers_from(payload: dict) -> dict:
    return {k: np.array(v, dtype=np.float64) for k, v in payload.items()}


def load_checkpoint(path) -> tuple[ExperimentConfig, TrainState]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{p}: not valid JSON ({exc})") from None
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{p}: format version {version!r} not supported (expected {FORMAT_VERSION})"
        )
    try:
        config = config_from_dict(payload["config"])
        enc = EncoderParams(
            weights=[np.array(w, dtype=np.float64) for w in payload["encoder"]["weights"]],
            biases=[np.array(b, dtype=np.float64) for b in payload["encoder"]["biases"]],
            activation=payload["encoder"]["activation"],
        )
        head = HeadParams(
            weight=np.array(payload["head"]["weight"], dtype=np.float64),
            bias=np.array(payload["head"]["bias"], dtype=np.float64),
        )
        proj = ProjectionParams(
            w_query=np.array(payload["projections"]["w_query"], dtype=np.float64),
            w_key=np.array(payload["projections"]["w_key"], dtype=np.float64),
        )
        bank = None
        if payload["bank"] is not None:
            bank = MemoryBank(
                features=np.array(payload["bank"]["features"], dtype=np.float64),
                labels=np.array(payload["bank"]["labels"], dtype=np.float64),
            )
        opt_p = payload["optimizer"]
        opt = OptimizerState(
            base_lr=opt_p["base_lr"],
            momentum=opt_p["momentum"],
            schedule=opt_p["schedule"],
            decay_epoch=opt_p["decay_epoch"],
            decay_factor=opt_p["decay_factor"],
            total_epochs=opt_p["total_epochs"],
            epoch=opt_p["epoch"],
            buffers=_buffers_from(opt_p["buffers"]),
        )
        state = TrainState(
            encoder=enc,
            head=head,
            proj=proj,
            bank=bank,
            opt=opt,
            rng_shuffle=RngStream.from_state(payload["rng"]["shuffle"]),
            rng_memory=RngStream.from_state(payload["rng"]["memory"]),
            warmup_done=payload["warmup_done"],
            epochs_done=payload["epochs_done"],
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{p}: malformed checkpoint ({exc!r})") from None
    return config, state
