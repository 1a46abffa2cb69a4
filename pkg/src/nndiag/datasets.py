"""Synthetic dataset generators and CSV loading."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from nndiag.tensor import Rng, Tensor

GENERATORS = ("blobs", "circles", "xor", "linear_regression")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    generator: Optional[str] = None
    source: Optional[str] = None
    samples: int = 200
    features: int = 2
    noise: float = 0.1
    normalize: bool = True
    feature_range: Optional[tuple] = None
    seed: int = 0
    label_kind: str = "binary"
    header: bool = False
    label_cols: int = 1

    def __post_init__(self):
        if (self.generator is None) == (self.source is None):
            raise DatasetError("give exactly one of 'generator' or 'source'")
        if self.generator is not None and self.generator not in GENERATORS:
            raise DatasetError(f"unknown generator {self.generator!r}; expected one of {', '.join(GENERATORS)}")
        if self.samples < 1 or self.features < 1:
            raise DatasetError("samples and features must be >= 1")
        if self.feature_range is not None:
            lo, hi = self.feature_range
            if not lo < hi:
                raise DatasetError("feature_range must be [low, high] with low < high")
            object.__setattr__(self, "feature_range", (float(lo), float(hi)))
        n_classes(self.label_kind)

    @classmethod
    def from_dict(cls, data: dict, base: Optional[Path] = None) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DatasetError(f"unknown dataset keys: {', '.join(unknown)}")
        data = dict(data)
        if data.get("source") and base is not None and not Path(data["source"]).is_absolute():
            data["source"] = str(base / data["source"])
        if isinstance(data.get("feature_range"), list):
            data["feature_range"] = tuple(data["feature_range"])
        return cls(**data)


def n_classes(label_kind: str) -> int:
    """2 for binary, k for ``one_hot(k)``/``one_hot:k``, 0 for continuous."""
    if label_kind == "binary":
        return 2
    if label_kind == "continuous":
        return 0
    for prefix in ("one_hot(", "one_hot:"):
        if label_kind.startswith(prefix):
            body = label_kind[len(prefix):].rstrip(")")
            if body.isdigit() and int(body) >= 2:
                return int(body)
    raise DatasetError(f"unknown label kind {label_kind!r}")


def _labels(classes: np.ndarray, label_kind: str) -> Tensor:
    k = n_classes(label_kind)
    if label_kind == "binary":
        return classes.reshape(-1, 1).astype(np.float64)
    return np.eye(k)[classes]


def _rescale(x: Tensor, lo: float, hi: float) -> Tensor:
    mn, mx = x.min(axis=0), x.max(axis=0)
    span = np.where(mx > mn, mx - mn, 1.0)
    return lo + (x - mn) / span * (hi - lo)


def blobs(spec: DatasetSpec, rng: Rng) -> tuple[Tensor, Tensor]:
    k = n_classes(spec.label_kind) or 2
    centers = rng.uniform(-5.0, 5.0, (k, spec.features))
    classes = np.arange(spec.samples) % k
    x = centers[classes] + rng.normal(0.0, spec.noise, (spec.samples, spec.features))
    return x, _labels(classes, spec.label_kind)


def circles(spec: DatasetSpec, rng: Rng) -> tuple[Tensor, Tensor]:
    classes = np.arange(spec.samples) % 2
    angle = rng.uniform(0.0, 2.0 * np.pi, spec.samples)
    radius = np.where(classes == 1, 0.5, 1.0)
    x = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    x = x + rng.normal(0.0, spec.noise, x.shape)
    if spec.features > 2:
        x = np.column_stack([x, rng.normal(0.0, spec.noise, (spec.samples, spec.features - 2))])
    return x, _labels(classes, spec.label_kind)


def xor(spec: DatasetSpec, rng: Rng) -> tuple[Tensor, Tensor]:
    corners = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    pattern = np.arange(spec.samples) % 4
    x = corners[pattern] + rng.normal(0.0, spec.noise, (spec.samples, 2)) if spec.noise > 0 else corners[pattern]
    classes = (corners[pattern, 0] * corners[pattern, 1] < 0).astype(int)
    return x, _labels(classes, spec.label_kind)


def linear_regression(spec: DatasetSpec, rng: Rng) -> tuple[Tensor, Tensor]:
    x = rng.uniform(-1.0, 1.0, (spec.samples, spec.features))
    coef = rng.uniform(-1.0, 1.0, (spec.features, 1))
    y = x @ coef + rng.normal(0.0, spec.noise, (spec.samples, 1))
    return x, y


def generate(spec: DatasetSpec, rng: Optional[Rng] = None) -> tuple[Tensor, Tensor]:
    rng = rng or Rng(spec.seed)
    if spec.generator == "xor" and spec.features != 2:
        raise DatasetError("xor has exactly 2 features")
    if spec.generator == "linear_regression" and spec.label_kind != "continuous":
        raise DatasetError("linear_regression produces continuous labels")
    if spec.generator != "linear_regression" and spec.label_kind == "continuous":
        raise DatasetError(f"{spec.generator} produces class labels")
    x, y = globals()[spec.generator](spec, rng)
    if spec.feature_range is not None:
        x = _rescale(x, *spec.feature_range)
    elif spec.normalize:
        x = _rescale(x, -1.0, 1.0)
    return np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64)


def load_csv(path, header: bool = False, label_cols: int = 1) -> tuple[Tensor, Tensor]:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise DatasetError(f"{path}: row {lineno}: non-numeric cell") from None
            if width is None:
                width = len(values)
                if width <= label_cols:
                    raise DatasetError(f"{path}: row {lineno}: need more than {label_cols} columns")
            elif len(values) != width:
                raise DatasetError(f"{path}: row {lineno}: expected {width} columns, got {len(values)}")
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    return data[:, :-label_cols], data[:, -label_cols:]


def load_or_generate_dataset(spec: DatasetSpec, rng: Optional[Rng] = None) -> tuple[Tensor, Tensor]:
    if spec.source is not None:
        path = Path(spec.source)
        if not path.exists():
            raise DatasetError(f"dataset file not found: {path}")
        return load_csv(path, spec.header, spec.label_cols)
    return generate(spec, rng)
