"""Root-cause checkers and the symptom -> actionable change decision rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nndiag.detectors import MonitorConfig, out_of_range
from nndiag.engine import ModelSpec
from nndiag.tensor import Tensor, frobenius_norm, variance

SYMPTOMS = {
    "NS": "Numerical Errors",
    "UCS": "Unchanged weight",
    "SAS": "Saturated Activation",
    "DNS": "Dead Node",
    "ORS": "Out of Range",
    "LNDS": "Loss Not Decreasing",
    "ANIS": "Accuracy Not Increasing",
    "VGS": "Vanishing Gradient",
    "ILS": "Invalid Loss",
    "IAS": "Invalid Accuracy",
    "CM": "Correct Model",
}
GLOBAL_SYMPTOMS = ("LNDS", "ANIS", "ILS", "IAS")
STAGES = ("FW", "BW", "GLOBAL")
QUANTITIES = ("V1", "V2", "V3", "W", "DW", "LOSS", "ACC")

MESSAGES = {
    "MSG0": "Improper Data",
    "MSG1": "Change the loss function",
    "MSG2": "Change the activation function",
    "MSG3": "Change the learning rate",
    "MSG4": "Change the initialization of weight",
    "MSG5": "Change the layer number",
    "MSG6": "Change the optimizer",
}

QUANTITY_NAMES = {
    "V1": "Layer Input",
    "V2": "Layer Output",
    "V3": "Backpropagated Gradient",
    "W": "Weights",
    "DW": "delta Weights",
    "LOSS": "Loss",
    "ACC": "Accuracy",
}


@dataclass(frozen=True)
class SymptomCode:
    code: str
    stage: Optional[str] = None
    layer_index: Optional[int] = None
    quantity: Optional[str] = None
    epoch: int = 0
    batch: int = 0

    def __post_init__(self):
        if self.code not in SYMPTOMS:
            raise ValueError(f"unknown symptom code {self.code!r}")
        if self.code == "CM":
            if self.stage is not None or self.layer_index is not None:
                raise ValueError("CM carries no stage or layer")
        elif self.code in GLOBAL_SYMPTOMS:
            if self.stage != "GLOBAL":
                raise ValueError(f"{self.code} is a GLOBAL symptom")
        elif self.stage not in ("FW", "BW"):
            raise ValueError(f"{self.code} needs stage FW or BW")
        if self.stage == "FW" and self.quantity not in ("V1", "V2"):
            raise ValueError("FW symptoms reference V1 or V2")
        if self.stage == "BW" and self.quantity not in ("V3", "W", "DW"):
            raise ValueError("BW symptoms reference V3, W or DW")

    @property
    def name(self) -> str:
        return SYMPTOMS[self.code]

    def render(self) -> str:
        """Compact form used for corpus matching, e.g. ``NS/BW/7``."""
        if self.code == "CM":
            return "CM"
        if self.stage == "GLOBAL":
            return f"{self.code}/GLOBAL"
        return f"{self.code}/{self.stage}/{self.layer_index}"

    def describe(self) -> str:
        if self.code == "CM":
            return "No issue detected (CM)"
        what = self.name
        if self.code == "NS" and self.quantity:
            what = f"Numerical Error in {QUANTITY_NAMES[self.quantity]}"
        if self.layer_index is not None:
            return f"Layer {self.layer_index}: {what}"
        return what


@dataclass(frozen=True)
class MessageCode:
    code: str
    target_layer: Optional[int] = None

    def __post_init__(self):
        if self.code not in MESSAGES:
            raise ValueError(f"unknown message code {self.code!r}")

    @property
    def text(self) -> str:
        suffix = f" at layer: {self.target_layer}" if self.target_layer is not None else ""
        return f"{self.code}: {MESSAGES[self.code]}{suffix}"


@dataclass
class DiagnosisContext:
    """Everything the mapper may inspect, captured when the symptom fired.

    ``weights``/``dws`` map dense-layer index to kernel-with-bias tensors;
    ``outputs`` is the last layer's output on the faulty batch.
    """

    symptom: SymptomCode
    model_spec: ModelSpec
    x: Tensor
    y: Tensor
    weights: dict
    dws: dict
    learning_rate: float
    outputs: Optional[Tensor] = None


@dataclass
class CheckRecord:
    check: str
    fired: bool
    value: object = None

    def to_dict(self) -> dict:
        return {"check": self.check, "fired": self.fired, "value": self.value}


# ------------------------------------------------------------------- checkers


def improper_data(x: Tensor, cfg: MonitorConfig) -> bool:
    """True when the training inputs leave [data_range_low, data_range_high]."""
    lo, hi = float(np.min(x)), float(np.max(x))
    if math.isnan(lo) or math.isnan(hi):
        return True
    return lo < cfg.data_range_low or hi > cfg.data_range_high


def weight_initialization(weights, cfg: MonitorConfig) -> bool:
    return poorly_initialized_layer(weights, cfg) is not None


def poorly_initialized_layer(weights, cfg: MonitorConfig) -> Optional[int]:
    """Index of the first layer whose weight variance is out of band, if any.

    ``weights`` is a mapping of layer index to tensor, or a plain sequence
    (then 1-based positions are reported).
    """
    items = weights.items() if isinstance(weights, dict) else enumerate(weights, start=1)
    for index, w in items:
        var = variance(w)
        if var <= cfg.weight_var_min or var >= cfg.weight_var_max:
            return index
    return None


def update_ratio(weights, dws, learning_rate: float) -> float:
    """Mean over layers of lr * ||dw|| / ||w||; layers with zero-norm weights are skipped."""
    if isinstance(weights, dict):
        pairs = [(weights[k], dws[k]) for k in weights if k in dws]
    else:
        pairs = list(zip(weights, dws))
    ratios = []
    for w, dw in pairs:
        wn = frobenius_norm(w)
        if wn == 0.0:
            continue
        ratios.append(learning_rate * frobenius_norm(dw) / wn)
    if not ratios:
        return float("nan")
    return math.fsum(ratios) / len(ratios)


def classify_ratio(r: float, cfg: MonitorConfig) -> str:
    if math.isnan(r):
        return "OK"
    if r < cfg.learn_threshold / cfg.learn_band_factor:
        return "LOW"
    if r > cfg.learn_threshold * cfg.learn_band_factor:
        return "HIGH"
    return "OK"


def tune_learn(weights, dws, learning_rate: float, cfg: MonitorConfig) -> str:
    return classify_ratio(update_ratio(weights, dws, learning_rate), cfg)


# --------------------------------------------------------- architecture checks


def label_kind(y: Tensor) -> str:
    values_binary = bool(np.all((y == 0.0) | (y == 1.0)))
    if y.shape[1] == 1:
        return "binary" if values_binary else "continuous"
    if values_binary and bool(np.all(np.sum(y, axis=1) == 1.0)):
        return "multiclass"
    return "continuous"


EXPECTED_HEAD = {
    "binary": ("sigmoid", "binary_crossentropy"),
    "multiclass": ("softmax", "categorical_crossentropy"),
    "continuous": ("linear", "mse"),
}


def last_activation(spec: ModelSpec) -> tuple[int, str]:
    """Index and name of the output activation. A trailing dense layer counts as linear."""
    for i in range(len(spec.layers), 0, -1):
        layer = spec.layers[i - 1]
        if layer.kind == "activation":
            return i, layer.activation
        if layer.kind == "dense":
            return i, "linear"
    raise ValueError("model has no dense layer")


def head_mismatch(spec: ModelSpec, y: Tensor) -> Optional[str]:
    """``"activation"`` or ``"loss"`` when the output head does not suit the labels."""
    want_act, want_loss = EXPECTED_HEAD[label_kind(y)]
    if last_activation(spec)[1] != want_act:
        return "activation"
    if spec.loss != want_loss:
        return "loss"
    return None


def activation_at_or_after(spec: ModelSpec, index: int) -> int:
    for i in range(index, len(spec.layers) + 1):
        if spec.layers[i - 1].kind == "activation":
            return i
    return index


def hidden_logistic_layer(spec: ModelSpec) -> Optional[int]:
    out = last_activation(spec)[0]
    for i in spec.activation_indices():
        if i != out and spec.layers[i - 1].activation in ("sigmoid", "tanh"):
            return i
    return None


def too_deep(spec: ModelSpec, cfg: MonitorConfig) -> bool:
    return len(spec.param_layer_indices()) > cfg.max_param_layers


# ----------------------------------------------------------------- the mapper


class _Walk:
    def __init__(self, ctx: DiagnosisContext, cfg: MonitorConfig, trace: Optional[list]):
        self.ctx, self.cfg = ctx, cfg
        self.trace = trace if trace is not None else []
        self._lr_band = None

    def record(self, check: str, fired: bool, value=None) -> bool:
        self.trace.append(CheckRecord(check, bool(fired), value))
        return bool(fired)

    def data(self) -> bool:
        x = self.ctx.x
        return self.record("improper_data", improper_data(x, self.cfg),
                           [float(np.min(x)), float(np.max(x))])

    def weight(self) -> Optional[int]:
        bad = poorly_initialized_layer(self.ctx.weights, self.cfg)
        self.record("weight_initialization", bad is not None, bad)
        return bad

    def learn(self) -> str:
        if self._lr_band is None:
            r = update_ratio(self.ctx.weights, self.ctx.dws, self.ctx.learning_rate)
            self._lr_band = classify_ratio(r, self.cfg)
            self.record("tune_learn", self._lr_band != "OK", {"ratio": r, "band": self._lr_band})
        return self._lr_band

    def depth(self) -> bool:
        n = len(self.ctx.model_spec.param_layer_indices())
        return self.record("depth", too_deep(self.ctx.model_spec, self.cfg), n)

    def head(self) -> Optional[str]:
        mismatch = head_mismatch(self.ctx.model_spec, self.ctx.y)
        self.record("head_consistency", mismatch is not None, mismatch)
        return mismatch

    def output_range(self) -> bool:
        out = self.ctx.outputs
        fired = out is not None and out_of_range(out, self.ctx.y)
        return self.record("output_range", fired)


def map_symptom(ctx: DiagnosisContext, cfg: MonitorConfig, trace: Optional[list] = None) -> MessageCode:
    """Walk the candidate root causes for ``ctx.symptom`` and return one actionable change.

    Candidates are tried most-frequent first; the first checker that flags
    decides. ``trace``, if given, collects a :class:`CheckRecord` per check.
    """
    s = ctx.symptom
    if s.code == "CM":
        raise ValueError("a correct model has nothing to map")
    spec = ctx.model_spec
    walk = _Walk(ctx, cfg, trace)
    last_act = last_activation(spec)[0]
    last_param = spec.param_layer_indices()[-1]
    faulty = s.layer_index

    if s.code in ("DNS", "SAS"):
        if walk.data():
            return MessageCode("MSG0")
        if (bad := walk.weight()) is not None:
            return MessageCode("MSG4", bad)
        if walk.learn() != "OK":
            return MessageCode("MSG3")
        return MessageCode("MSG2", faulty)

    if s.code == "NS" and s.stage == "BW":
        feeds_output = faulty == last_param or activation_at_or_after(spec, faulty + 1) == last_act
        if walk.record("feeds_output_activation", feeds_output, faulty):
            return MessageCode("MSG2", last_act)
        if walk.learn() == "HIGH":
            return MessageCode("MSG3")
        if (bad := walk.weight()) is not None:
            return MessageCode("MSG4", bad)
        if walk.data():
            return MessageCode("MSG0")
        walk.record("note", True, "all checkers passed; a very large batch size can also cause this")
        return MessageCode("MSG1")

    if s.code == "NS":
        if walk.learn() == "HIGH":
            return MessageCode("MSG3")
        if (bad := walk.weight()) is not None:
            return MessageCode("MSG4", bad)
        if walk.data():
            return MessageCode("MSG0")
        return MessageCode("MSG2", activation_at_or_after(spec, faulty))

    if s.code == "UCS":
        if walk.learn() == "LOW":
            return MessageCode("MSG3")
        if walk.output_range():
            return MessageCode("MSG2", last_act)
        if (bad := walk.weight()) is not None:
            return MessageCode("MSG4", bad)
        return MessageCode("MSG6")

    if s.code == "ORS":
        return MessageCode("MSG2", last_act)

    if s.code in ("LNDS", "ANIS"):
        if walk.data():
            return MessageCode("MSG0")
        if walk.learn() != "OK":
            return MessageCode("MSG3")
        if walk.depth():
            return MessageCode("MSG5", last_param)
        if walk.head() == "loss":
            return MessageCode("MSG1")
        return MessageCode("MSG2", last_act)

    if s.code == "VGS":
        if walk.depth():
            return MessageCode("MSG5", faulty)
        if walk.learn() == "LOW":
            return MessageCode("MSG3")
        hidden = hidden_logistic_layer(spec)
        if walk.record("hidden_logistic", hidden is not None, hidden):
            return MessageCode("MSG2", hidden)
        return MessageCode("MSG4", faulty)

    if s.code == "ILS":
        return MessageCode("MSG1")

    if s.code == "IAS":
        if walk.head() == "activation":
            return MessageCode("MSG2", last_act)
        return MessageCode("MSG1")

    raise ValueError(f"no rule for symptom {s.code!r}")
