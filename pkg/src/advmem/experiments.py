"""Experiment orchestration: training runs with artifact emission, checkpoint
evaluation and prediction, hyperparameter sweeps, and the ablation grid.

Every run writes three artifacts into its output directory:

  metrics.csv      one row per epoch: epoch,L_cls,L_aug,train_acc,acc_<dom>...
                   (deterministic columns only, so identical config + seed
                   reproduces the file byte-for-byte)
  checkpoint.json  full resumable state
  summary.json     final accuracies, config hash, seed, wall-clock timing
"""

from __future__ import annotations

import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, write_json_atomic
from .config import ExperimentConfig, config_from_dict, config_hash
from .data import LabeledDataset, load_csv, make_benchmark
from .numcore import ContractViolation, round_count
from .trainer import (
    ABLATIONS,
    TrainState,
    augmentation_active,
    continue_training,
    evaluate_accuracy,
    predict,
    run_training,
)

SWEEPABLE = ("lambda_aug", "gamma", "beta", "r_m")


def build_datasets(config: ExperimentConfig) -> tuple[LabeledDataset, list]:
    data = config.data
    if data.kind == "synthetic":
        return make_benchmark(
            seed=config.seed,
            n_train=data.n_train,
            n_test_per_domain=data.n_test_per_domain,
            geometry=data.geometry,
            domain_specs=data.domain_specs(),
            d_x=data.d_x,
            n_classes=data.n_classes,
            geometry_noise=data.geometry_noise,
            embed_noise=data.embed_noise,
        )
    train = load_csv(data.train_path, name="train")
    n_classes = data.n_classes or train.n_classes
    if train.n_classes > n_classes:
        raise ContractViolation(
            f"training file has {train.n_classes} classes, config says {n_classes}"
        )
    tests = [load_csv(path, name=name) for name, path in data.test_paths.items()]
    for ds in (train, *tests):
        if ds.d_x != train.d_x:
            raise ContractViolation(f"domain {ds.name!r} has d_x={ds.d_x}, train has {train.d_x}")
    return train, tests


def _fmt(v: float) -> str:
    return repr(float(v))


def metrics_csv_text(history: list, domain_names: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "L_cls", "L_aug", "train_acc"] + [f"acc_{d}" for d in domain_names])
    for row in history:
        writer.writerow(
            [row.epoch, _fmt(row.loss_cls), _fmt(row.loss_aug), _fmt(row.train_acc)]
            + [_fmt(row.test_acc[d]) for d in domain_names]
        )
    return buf.getvalue()


def write_text_atomic(path, text: str) -> None:
    import os
    import tempfile

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=p.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Train per the config and write metrics.csv / checkpoint.json /
    summary.json into ``out_dir``. Returns the summary document."""
    out = Path(out_dir)
    t0 = time.perf_counter()
    train, tests = build_datasets(config)
    cfg = config.train_config()
    state, history = run_training(
        train, tests, cfg, config.model.to_dims(), config.optimizer.to_settings()
    )
    wall_ms = (time.perf_counter() - t0) * 1e3

    domain_names = [ds.name for ds in tests]
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / "metrics.csv", metrics_csv_text(history, domain_names))
    save_checkpoint(out / "checkpoint.json", config, state)

    final = history[-1] if history else None
    test_acc = dict(final.test_acc) if final else {}
    summary = {
        "seed": config.seed,
        "config_hash": config_hash(config),
        "ablation": cfg.ablation,
        "epochs_total": len(history),
        "bank_size": state.bank.size if state.bank is not None else 0,
        "train_acc": final.train_acc if final else None,
        "test_acc": test_acc,
        "test_acc_mean": float(np.mean(list(test_acc.values()))) if test_acc else None,
        "wall_ms_total": wall_ms,
        "wall_ms_per_epoch": [row.wall_ms for row in history],
    }
    write_json_atomic(out / "summary.json", summary)
    return summary


def resume_experiment(checkpoint_path, extra_epochs: int, out_dir=None) -> list:
    """Continue a finished run for ``extra_epochs`` more epochs. The restored
    state (parameters, bank, optimizer buffers, RNG positions) continues the
    original trajectory exactly; returns the new metric rows."""
    if extra_epochs < 1:
        raise ContractViolation("extra_epochs must be >= 1")
    config, state = load_checkpoint(checkpoint_path)
    train, tests = build_datasets(config)
    cfg = config.train_config()
    rows = continue_training(train, tests, state, cfg, extra_epochs)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_text_atomic(
            out / "metrics.csv", metrics_csv_text(rows, [ds.name for ds in tests])
        )
        save_checkpoint(out / "checkpoint.json", config, state)
    return rows


def _eval_datasets(config: ExperimentConfig, data_spec: dict | None, csv_path) -> list:
    if data_spec is not None and csv_path is not None:
        raise ContractViolation("give either a data spec or a csv path, not both")
    if csv_path is not None:
        return [load_csv(csv_path)]
    if data_spec is not None:
        probe = config_from_dict({"seed": config.seed, "data": data_spec})
        train, tests = build_datasets(probe)
        return [train, *tests]
    train, tests = build_datasets(config)
    return [train, *tests]


def evaluate_checkpoint(
    checkpoint_path,
    data_spec: dict | None = None,
    csv_path=None,
    use_memory: bool = True,
    out_path=None,
) -> dict:
    """Per-domain accuracy of a stored model. Without an explicit dataset the
    checkpoint's own benchmark (train plus every test domain) is evaluated."""
    config, state = load_checkpoint(checkpoint_path)
    datasets = _eval_datasets(config, data_spec, csv_path)
    if use_memory and state.bank is None:
        raise ContractViolation(
            "checkpoint has no memory bank; evaluate with use_memory=false"
        )
    rows = []
    for ds in datasets:
        if ds.d_x != state.encoder.in_dim:
            raise ContractViolation(
                f"dataset {ds.name!r} has {ds.d_x} features, model expects {state.encoder.in_dim}"
            )
        acc = evaluate_accuracy(ds, state.encoder, state.head, state.proj, state.bank, use_memory)
        rows.append({"domain": ds.name, "n": ds.n, "accuracy": acc})
    result = {"use_memory": use_memory, "domains": rows}
    if out_path is not None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["domain", "n", "accuracy"])
        for row in rows:
            writer.writerow([row["domain"], row["n"], _fmt(row["accuracy"])])
        write_text_atomic(out_path, buf.getvalue())
    return result


def predict_with_checkpoint(checkpoint_path, inputs, use_memory: bool = True) -> dict:
    config, state = load_checkpoint(checkpoint_path)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != state.encoder.in_dim:
        raise ContractViolation(
            f"inputs must be rows of {state.encoder.in_dim} features"
        )
    classes = []
    logits = []
    for row in x:
        cls, lg = predict(row, state.encoder, state.head, state.proj, state.bank, use_memory)
        classes.append(cls)
        logits.append([float(v) for v in lg])
    return {"classes": classes, "logits": logits}


def _set_sweep_value(config: ExperimentConfig, parameter: str, value: float) -> ExperimentConfig:
    raw = config.model_dump(mode="json")
    raw["train"][parameter] = value
    return config_from_dict(raw)


def run_sweep(config: ExperimentConfig, parameter: str, values: list, out_dir) -> dict:
    """One full training run per value (shared base seed); emits a
    long-format CSV. Illegal values are skipped with a warning and appear in
    the CSV with status=skipped."""
    if parameter not in SWEEPABLE:
        raise ContractViolation(f"parameter must be one of {SWEEPABLE}, got {parameter!r}")
    if not values:
        raise ContractViolation("sweep needs at least one value")
    out = Path(out_dir)
    rows = []
    domain_names = None
    for value in values:
        try:
            run_config = _set_sweep_value(config, parameter, value)
        except Exception as exc:
            print(f"warning: skipping {parameter}={value}: {exc}", file=sys.stderr)
            rows.append({"parameter": parameter, "value": value, "seed": config.seed,
                         "status": f"skipped: {exc}", "bank_size": "", "acc": {}, "mean": ""})
            continue
        summary = run_experiment(run_config, out / f"run_{parameter}_{value}")
        if domain_names is None:
            domain_names = list(summary["test_acc"].keys())
        rows.append({
            "parameter": parameter, "value": value, "seed": config.seed, "status": "ok",
            "bank_size": summary["bank_size"], "acc": summary["test_acc"],
            "mean": summary["test_acc_mean"],
        })
    if domain_names is None:  # every value was skipped
        train, tests = build_datasets(config)
        domain_names = [ds.name for ds in tests]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["parameter", "value", "seed", "bank_size"]
                    + [f"acc_{d}" for d in domain_names] + ["acc_mean", "status"])
    for row in rows:
        accs = [(_fmt(row["acc"][d]) if d in row["acc"] else "") for d in domain_names]
        mean = _fmt(row["mean"]) if row["mean"] != "" else ""
        writer.writerow([row["parameter"], row["value"], row["seed"], row["bank_size"]]
                        + accs + [mean, row["status"]])
    csv_path = out / f"sweep_{parameter}.csv"
    write_text_atomic(csv_path, buf.getvalue())
    return {"rows": rows, "csv_path": str(csv_path)}


def run_ablate(config: ExperimentConfig, out_dir) -> dict:
    """Full model plus the four ablations under the same seed; emits a
    variant-by-domain accuracy CSV."""
    out = Path(out_dir)
    rows = []
    domain_names = None
    for variant in ABLATIONS:
        raw = config.model_dump(mode="json")
        raw["train"]["ablation"] = variant
        run_config = config_from_dict(raw)
        summary = run_experiment(run_config, out / f"run_{variant}")
        if domain_names is None:
            domain_names = list(summary["test_acc"].keys())
        rows.append({"variant": variant, "seed": config.seed,
                     "acc": summary["test_acc"], "mean": summary["test_acc_mean"]})

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "seed"] + [f"acc_{d}" for d in domain_names] + ["acc_mean"])
    for row in rows:
        writer.writerow([row["variant"], row["seed"]]
                        + [_fmt(row["acc"][d]) for d in domain_names] + [_fmt(row["mean"])])
    csv_path = out / "ablation.csv"
    write_text_atomic(csv_path, buf.getvalue())
    return {"rows": rows, "csv_path": str(csv_path)}
