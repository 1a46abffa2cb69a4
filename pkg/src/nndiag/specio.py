"""JSON documents for model specs, dataset specs and monitor configs."""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path
from typing import Optional

from nndiag.datasets import DatasetError, DatasetSpec
from nndiag.detectors import MonitorConfig
from nndiag.engine import LayerSpec, ModelSpec, SpecError

_MODEL_KEYS = {f.name for f in fields(ModelSpec)} | {"name", "description"}
_LAYER_KEYS = {f.name for f in fields(LayerSpec)}


def _load_json(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(what, f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def model_spec_from_dict(doc: dict) -> ModelSpec:
    if not isinstance(doc, dict):
        raise SpecError("model", "expected a JSON object")
    unknown = sorted(set(doc) - _MODEL_KEYS)
    if unknown:
        raise SpecError(unknown[0], "unknown field")
    if not isinstance(doc.get("layers"), list):
        raise SpecError("layers", "expected a list of layer objects")
    layers = []
    for i, entry in enumerate(doc["layers"], start=1):
        if not isinstance(entry, dict):
            raise SpecError(f"layers[{i}]", "expected an object")
        bad = sorted(set(entry) - _LAYER_KEYS)
        if bad:
            raise SpecError(f"layers[{i}].{bad[0]}", "unknown field")
        if "kind" not in entry:
            raise SpecError(f"layers[{i}].kind", "missing")
        layers.append(LayerSpec(**entry))
    kwargs = {k: v for k, v in doc.items() if k not in ("layers", "name", "description")}
    spec = ModelSpec(layers=tuple(layers), **kwargs)
    try:
        spec.validate()
    except TypeError as exc:
        # e.g. a string where a number belongs
        raise SpecError("model", f"wrong value type: {exc}") from None
    return spec


def parse_model_spec(text: str) -> ModelSpec:
    return model_spec_from_dict(_load_json(text, "model"))


def model_spec_to_dict(spec: ModelSpec) -> dict:
    defaults = {f.name: f.default for f in fields(LayerSpec)}
    layers = []
    for layer in spec.layers:
        entry = {"kind": layer.kind}
        for f in fields(LayerSpec):
            value = getattr(layer, f.name)
            if f.name != "kind" and value != defaults[f.name]:
                entry[f.name] = value
        layers.append(entry)
    out = {"layers": layers}
    for f in fields(ModelSpec):
        if f.name != "layers":
            out[f.name] = getattr(spec, f.name)
    return out


def load_model_spec(path) -> ModelSpec:
    return parse_model_spec(Path(path).read_text())


def parse_dataset_spec(text: str, base: Optional[Path] = None) -> DatasetSpec:
    doc = _load_json(text, "dataset")
    if not isinstance(doc, dict):
        raise DatasetError("dataset spec must be a JSON object")
    return DatasetSpec.from_dict(doc, base)


def dataset_spec_for(path) -> DatasetSpec:
    """A ``.csv`` path becomes a file source; anything else is read as a JSON dataset spec."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return DatasetSpec(source=str(path))
    if not path.exists():
        raise DatasetError(f"dataset spec not found: {path}")
    return parse_dataset_spec(path.read_text(), path.parent)


def load_config(path) -> MonitorConfig:
    doc = _load_json(Path(path).read_text(), "config")
    if not isinstance(doc, dict):
        raise SpecError("config", "expected a JSON object")
    return MonitorConfig.from_dict(doc)
