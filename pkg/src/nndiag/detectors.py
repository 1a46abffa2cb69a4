"""Symptom detectors.

Each detector is a pure function of its inputs, a :class:`MonitorConfig` and,
for the windowed ones, a caller-owned :class:`History`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, fields

import numpy as np

from nndiag.tensor import Tensor, all_zero, mean


@dataclass(frozen=True)
class MonitorConfig:
    history_window: int = 5
    saturation_max: float = 5.0
    saturation_min: float = -5.0
    saturation_layer_ratio: float = 0.5
    dead_node_threshold: float = 0.0
    dead_node_layer_ratio: float = 0.7
    vanishing_threshold: float = 1e-7
    data_range_low: float = -1.0
    data_range_high: float = 1.0
    weight_var_min: float = 1e-5
    weight_var_max: float = 10.0
    learn_threshold: float = 1e-3
    learn_band_factor: float = 10.0
    unchanged_rel_tolerance: float = 1e-6
    max_param_layers: int = 8

    def __post_init__(self):
        if self.history_window < 2:
            raise ValueError("history_window must be >= 2")
        for name in ("saturation_layer_ratio", "dead_node_layer_ratio"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not self.saturation_min < self.saturation_max:
            raise ValueError("saturation_min must be below saturation_max")
        if not self.weight_var_min < self.weight_var_max:
            raise ValueError("weight_var_min must be below weight_var_max")
        if not self.data_range_low < self.data_range_high:
            raise ValueError("data_range_low must be below data_range_high")
        if self.learn_band_factor < 1.0:
            raise ValueError("learn_band_factor must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "MonitorConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        coerced = {}
        for key, value in data.items():
            coerced[key] = int(value) if key in ("history_window", "max_param_layers") else float(value)
        return cls(**coerced)

    def to_dict(self) -> dict:
        return asdict(self)


class History:
    """The last ``size`` observations of one monitored quantity.

    ``seen`` counts every observation pushed, including evicted ones; the
    windowed detectors use it to evaluate once every ``size`` steps.
    """

    def __init__(self, size: int):
        self.size = size
        self.values: deque = deque(maxlen=size)
        self.seen = 0

    @property
    def full(self) -> bool:
        return len(self.values) == self.size

    def due(self) -> bool:
        return self.full and self.seen % self.size == 0

    def mean(self) -> float:
        # Offsets from the first value keep the mean of a constant window exact;
        # fsum(c, c, c) / 3 can land one ulp away from c.
        anchor = self.values[0]
        if not all(math.isfinite(v) for v in self.values):
            return sum(self.values) / len(self.values)
        return anchor + math.fsum(v - anchor for v in self.values) / len(self.values)

    def push(self, value: float) -> None:
        self.values.append(value)
        self.seen += 1

    def __len__(self):
        return len(self.values)


def exploding_tensor(t: Tensor) -> bool:
    """Numerical error: the mean is NaN/inf, or every element is exactly zero."""
    return not math.isfinite(mean(t)) or all_zero(t)


def _windowed(value: float, hist: History, fires) -> bool:
    verdict = False
    if hist.due():
        verdict = bool(fires(value, hist.mean()))
    hist.push(value)
    return verdict


def unchanged_weight(current: Tensor, hist: History, cfg: MonitorConfig) -> bool:
    """Tensor mean within a relative tolerance of the mean of the stored window."""
    tol = cfg.unchanged_rel_tolerance
    return _windowed(mean(current), hist, lambda cur, ref: abs(cur - ref) <= tol * max(abs(cur), abs(ref)))


def saturated_activation(v1: Tensor, activation_name: str, cfg: MonitorConfig) -> bool:
    if activation_name not in ("sigmoid", "tanh"):
        return False
    saturated = np.count_nonzero((v1 >= cfg.saturation_max) | (v1 <= cfg.saturation_min))
    return saturated / v1.size > cfg.saturation_layer_ratio


def dead_node(v2: Tensor, activation_name: str, cfg: MonitorConfig) -> bool:
    if activation_name != "relu":
        return False
    inactive = np.count_nonzero(v2 <= cfg.dead_node_threshold)
    return inactive / v2.size > cfg.dead_node_layer_ratio


def out_of_range(v2_last: Tensor, y: Tensor) -> bool:
    """Output range not contained in the label range. NaN outputs count as out of range."""
    lo, hi = float(np.min(v2_last)), float(np.max(v2_last))
    if math.isnan(lo) or math.isnan(hi):
        return True
    return lo < float(np.min(y)) or hi > float(np.max(y))


def loss_not_decreasing(loss: float, hist: History, cfg: MonitorConfig) -> bool:
    return _windowed(loss, hist, lambda cur, ref: cur >= ref)


def accuracy_not_increasing(acc: float, hist: History, cfg: MonitorConfig) -> bool:
    return _windowed(acc, hist, lambda cur, ref: cur <= ref)


def vanishing_gradient(dw: Tensor, cfg: MonitorConfig) -> bool:
    """Mean absolute gradient below the threshold.

    An exactly-zero gradient is left to :func:`exploding_tensor`, which
    reports it as a numerical error.
    """
    if all_zero(dw):
        return False
    with np.errstate(invalid="ignore", over="ignore"):
        return bool(np.mean(np.abs(dw)) < cfg.vanishing_threshold)
