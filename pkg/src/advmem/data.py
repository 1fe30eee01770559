"""Synthetic one-training/many-testing domain benchmarks, plus CSV ingest.

Datasets are generated in a 2-d latent space (two moons or class blobs),
transformed per domain (rotate, scale, translate, warp), then lifted into
the ambient input dimension by a fixed orthonormal embedding shared by all
domains, with isotropic feature noise added on top. Labels ride along with
the points, so every domain transform is label-preserving by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numcore import ContractViolation, RngStream

# Stream keys for benchmark sub-generators, fixed so datasets are a pure
# function of (seed, spec).
_KEY_EMBED = 101
_KEY_TRAIN = 102
_KEY_DOMAIN_BASE = 200


class CsvFormatError(RuntimeError):
    """A data file exists but cannot be parsed into a dataset."""


@dataclass
class DomainSpec:
    name: str
    rotation_deg: float = 0.0
    translation: tuple = (0.0, 0.0)
    scale: tuple = (1.0, 1.0)
    noise_std: float = 0.0
    warp: float = 0.0

    def validate(self) -> None:
        if any(s <= 0 for s in self.scale):
            raise ContractViolation(f"domain {self.name!r}: scale entries must be > 0")
        if self.noise_std < 0:
            raise ContractViolation(f"domain {self.name!r}: noise std must be >= 0")


@dataclass
class LabeledDataset:
    name: str
    inputs: np.ndarray  # (n, d_x)
    labels: np.ndarray  # (n, n_classes) one-hot rows

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_x(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    def validate(self) -> None:
        if self.inputs.ndim != 2 or self.labels.ndim != 2:
            raise ContractViolation("dataset arrays must be 2-d")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractViolation("inputs and labels disagree in length")
        if self.n < 1:
            raise ContractViolation("dataset is empty")
        one = np.isclose(self.labels, 1.0)
        zero = np.isclose(self.labels, 0.0)
        if not np.all(one.sum(axis=1) == 1) or not np.all(one | zero):
            raise ContractViolation("labels must be one-hot rows")

    def class_indices(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)


def _balanced_classes(n: int, n_classes: int) -> np.ndarray:
    """Class ids with per-class counts within one of n / n_classes."""
    base = n // n_classes
    counts = [base + (1 if c < n % n_classes else 0) for c in range(n_classes)]
    return np.concatenate([np.full(cnt, c) for c, cnt in enumerate(counts)])


def _sample_two_moons(n: int, rng: RngStream, noise: float) -> tuple[np.ndarray, np.ndarray]:
    cls = _balanced_classes(n, 2)
    t = rng.uniform(n) * math.pi
    pts = np.empty((n, 2))
    upper = cls == 0
    pts[upper, 0] = np.cos(t[upper])
    pts[upper, 1] = np.sin(t[upper])
    pts[~upper, 0] = 1.0 - np.cos(t[~upper])
    pts[~upper, 1] = 0.5 - np.sin(t[~upper])
    pts += noise * rng.normal(2 * n).reshape(n, 2)
    pts -= np.array([0.5, 0.25])  # center so rotation is a pure shift
    return pts, cls


def _sample_blobs(n: int, rng: RngStream, noise: float, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    cls = _balanced_classes(n, n_classes)
    angles = 2.0 * math.pi * cls / n_classes
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = centers + noise * rng.normal(2 * n).reshape(n, 2)
    return pts, cls


def _apply_domain(pts: np.ndarray, spec: DomainSpec) -> np.ndarray:
    out = pts * np.asarray(spec.scale, dtype=np.float64)
    theta = math.radians(spec.rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    out = out @ rot.T
    out = out + np.asarray(spec.translation, dtype=np.float64)
    if spec.warp != 0.0:
        out = out + spec.warp * np.stack(
            [np.sin(math.pi * out[:, 1]), np.sin(math.pi * out[:, 0])], axis=1
        )
    return out


def _one_hot(cls: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.zeros((cls.shape[0], n_classes))
    labels[np.arange(cls.shape[0]), cls] = 1.0
    return labels


def default_domain_specs() -> list:
    """One training domain (identity) plus four increasingly rotated tests."""
    return [DomainSpec(name=f"rot{a}", rotation_deg=float(a)) for a in (15, 30, 45, 60)]


def make_benchmark(
    seed: int,
    n_train: int,
    n_test_per_domain: int,
    geometry: str = "two_moons",
    domain_specs: list | None = None,
    d_x: int = 10,
    n_classes: int = 2,
    geometry_noise: float = 0.1,
    embed_noise: float = 0.05,
) -> tuple[LabeledDataset, list]:
    """Training set from the canonical (identity) domain plus one test set
    per spec, each built from freshly sampled canonical points. Deterministic
    in (seed, arguments)."""
    if geometry not in ("two_moons", "gaussian_blobs"):
        raise ContractViolation(f"unknown geometry {geometry!r}")
    if geometry == "two_moons" and n_classes != 2:
        raise ContractViolation("two_moons geometry is binary")
    if n_classes < 2:
        raise ContractViolation("need at least two classes")
    if min(n_train, n_test_per_domain) < n_classes:
        raise ContractViolation("need at least one point per class")
    if d_x < 2:
        raise ContractViolation("ambient dimension must be >= 2")
    if geometry_noise < 0 or embed_noise < 0:
        raise ContractViolation("noise levels must be >= 0")
    specs = default_domain_specs() if domain_specs is None else list(domain_specs)
    if not specs:
        raise ContractViolation("at least one test domain spec is required")
    for spec in specs:
        spec.validate()

    # Orthonormal 2 -> d_x embedding, fixed across all domains of this seed.
    embed_rng = RngStream(seed, key=_KEY_EMBED)
    g = embed_rng.normal(d_x * 2).reshape(d_x, 2)
    q, _ = np.linalg.qr(g)
    embed = q[:, :2]

    def build(name: str, n: int, spec: DomainSpec, rng: RngStream) -> LabeledDataset:
        if geometry == "two_moons":
            pts, cls = _sample_two_moons(n, rng, geometry_noise)
        else:
            pts, cls = _sample_blobs(n, rng, geometry_noise, n_classes)
        pts = _apply_domain(pts, spec)
        x = pts @ embed.T
        total_noise = embed_noise + spec.noise_std
        if total_noise > 0:
            x = x + total_noise * rng.normal(n * d_x).reshape(n, d_x)
        ds = LabeledDataset(name=name, inputs=x, labels=_one_hot(cls, n_classes))
        ds.validate()
        return ds

    identity = DomainSpec(name="train")
    train = build("train", n_train, identity, RngStream(seed, key=_KEY_TRAIN))
    tests = [
        build(spec.name, n_test_per_domain, spec, RngStream(seed, key=_KEY_DOMAIN_BASE + i))
        for i, spec in enumerate(specs)
    ]
    return train, tests


@dataclass
class CsvSchema:
    feature_columns: list
    label_column: str
    n_classes: int


def load_csv(path, schema: CsvSchema | None = None, name: str | None = None) -> LabeledDataset:
    """Read `f0,...,fk,label` rows into a dataset.

    Without an explicit schema, feature columns are every column except the
    final `label` column and the class count is inferred as max(label) + 1.
    Malformed rows raise :class:`CsvFormatError` naming the line number.
    """
    p = Path(path)
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{p}: no data rows") from None
        header = [h.strip() for h in header]
        if schema is None:
            if "label" not in header:
                raise CsvFormatError(f"{p}: header has no 'label' column")
            schema_cols = [h for h in header if h != "label"]
            schema_use = CsvSchema(schema_cols, "label", 0)
        else:
            schema_use = schema
        try:
            feat_idx = [header.index(c) for c in schema_use.feature_columns]
            label_idx = header.index(schema_use.label_column)
        except ValueError as exc:
            raise CsvFormatError(f"{p}: missing column: {exc}") from None

        rows = []
        classes = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(row[i]) for i in feat_idx])
                cls = int(row[label_idx])
            except (ValueError, IndexError):
                raise CsvFormatError(f"{p}: malformed row at line {lineno}") from None
            if cls < 0:
                raise CsvFormatError(f"{p}: negative class id at line {lineno}")
            classes.append(cls)

    if not rows:
        raise CsvFormatError(f"{p}: no data rows")
    n_classes = schema_use.n_classes or (max(classes) + 1)
    bad = next((i for i, c in enumerate(classes) if c >= n_classes), None)
    if bad is not None:
        raise CsvFormatError(
            f"{p}: unknown class id {classes[bad]} at line {bad + 2} (n_classes={n_classes})"
        )
    x = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise CsvFormatError(f"{p}: non-finite feature values")
    ds = LabeledDataset(name=name or p.stem, inputs=x, labels=_one_hot(np.array(classes), n_classes))
    ds.validate()
    return ds


def save_csv(dataset: LabeledDataset, path) -> None:
    """Write `f0,...,fk,label` with value-preserving float encoding."""
    p = Path(path)
    with p.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.d_x)] + ["label"])
        cls = dataset.class_indices()
        for i in range(dataset.n):
            writer.writerow([repr(float(v)) for v in dataset.inputs[i]] + [int(cls[i])])
