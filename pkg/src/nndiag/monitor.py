"""Runs the detectors inside the training loop and assembles the diagnosis report.

Check order per batch:

* forward, layer by layer: numerical error (v2, v1), unchanged value
  (v2, v1), saturation on logistic layers, dead nodes on relu layers,
  output range on the final layer;
* metrics: invalid loss, invalid accuracy, loss plateau, accuracy plateau;
* backward, dense layers from last to first: vanishing gradient (dw),
  numerical error (dw, v3), unchanged value (dw, v3).

The first check that fires stops training and is mapped to a fix.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nndiag import detectors as det
from nndiag.detectors import History, MonitorConfig
from nndiag.diagnosis import (
    CheckRecord,
    DiagnosisContext,
    MessageCode,
    SymptomCode,
    map_symptom,
)
from nndiag.engine import (
    LayerTrace,
    ModelSpec,
    StepInfo,
    StepMetrics,
    TrainingHooks,
    backward,
    build_model,
    train,
)
from nndiag.tensor import Rng, as_tensor, mean, variance


class Monitor(TrainingHooks):
    def __init__(self, model, x, y, cfg: MonitorConfig):
        self.model = model
        self.x, self.y = x, y
        self.cfg = cfg
        self.histories: dict = {}
        self.checks_run = 0
        self.last_traces: Optional[list] = None
        self.context: Optional[DiagnosisContext] = None

    def history(self, key) -> History:
        if key not in self.histories:
            self.histories[key] = History(self.cfg.history_window)
        return self.histories[key]

    def _check(self, fired: bool) -> bool:
        self.checks_run += 1
        return fired

    def _symptom(self, code, stage, layer, quantity, info: StepInfo) -> SymptomCode:
        return SymptomCode(code, stage, layer, quantity, info.epoch, info.batch)

    # -- hooks

    def forward_checks(self, traces: list[LayerTrace], info: StepInfo) -> Optional[SymptomCode]:
        cfg = self.cfg
        last = len(traces)
        for t in traces:
            k = t.layer_index
            for q, v in (("V2", t.v2), ("V1", t.v1)):
                if self._check(det.exploding_tensor(v)):
                    return self._symptom("NS", "FW", k, q, info)
            for q, v in (("V2", t.v2), ("V1", t.v1)):
                if self._check(det.unchanged_weight(v, self.history((k, "FW", q)), cfg)):
                    return self._symptom("UCS", "FW", k, q, info)
            if t.activation in ("sigmoid", "tanh"):
                if self._check(det.saturated_activation(t.v1, t.activation, cfg)):
                    return self._symptom("SAS", "FW", k, "V1", info)
            if t.activation == "relu":
                if self._check(det.dead_node(t.v2, t.activation, cfg)):
                    return self._symptom("DNS", "FW", k, "V2", info)
            if k == last and self._check(det.out_of_range(t.v2, self.y)):
                return self._symptom("ORS", "FW", k, "V2", info)
        return None

    def metrics_checks(self, metrics: StepMetrics, info: StepInfo) -> Optional[SymptomCode]:
        cfg = self.cfg
        acc = metrics.accuracy
        if self._check(not math.isfinite(metrics.loss)):
            return self._symptom("ILS", "GLOBAL", None, "LOSS", info)
        if acc is not None and self._check(not math.isfinite(acc) or acc == 0.0):
            return self._symptom("IAS", "GLOBAL", None, "ACC", info)
        if self._check(det.loss_not_decreasing(metrics.loss, self.history("LOSS"), cfg)):
            return self._symptom("LNDS", "GLOBAL", None, "LOSS", info)
        if acc is not None and self._check(det.accuracy_not_increasing(acc, self.history("ACC"), cfg)):
            return self._symptom("ANIS", "GLOBAL", None, "ACC", info)
        return None

    def backward_checks(self, traces: list[LayerTrace], info: StepInfo) -> Optional[SymptomCode]:
        cfg = self.cfg
        for t in reversed(traces):
            if t.dw is None:
                continue
            k = t.layer_index
            if self._check(det.vanishing_gradient(t.dw, cfg)):
                return self._symptom("VGS", "BW", k, "DW", info)
            for q, v in (("DW", t.dw), ("V3", t.v3)):
                if self._check(det.exploding_tensor(v)):
                    return self._symptom("NS", "BW", k, q, info)
            for q, v in (("DW", t.dw), ("V3", t.v3)):
                if self._check(det.unchanged_weight(v, self.history((k, "BW", q)), cfg)):
                    return self._symptom("UCS", "BW", k, q, info)
        return None

    def on_forward(self, traces, info):
        self.last_traces = traces
        symptom = self.forward_checks(traces, info)
        if symptom is not None:
            self._capture(symptom, traces, info, need_backward=True)
        return symptom

    def on_metrics(self, metrics, info):
        symptom = self.metrics_checks(metrics, info)
        if symptom is not None:
            self._capture(symptom, self.last_traces, info, need_backward=True)
        return symptom

    def on_backward(self, traces, info):
        self.last_traces = traces
        symptom = self.backward_checks(traces, info)
        if symptom is not None:
            self._capture(symptom, traces, info, need_backward=False)
        return symptom

    def _capture(self, symptom: SymptomCode, traces, info: StepInfo, need_backward: bool) -> None:
        if need_backward:
            # gradients of the faulty batch, without applying an update
            traces = backward(self.model, traces, info.y)
            self.last_traces = traces
        self.context = DiagnosisContext(
            symptom=symptom,
            model_spec=self.model.spec,
            x=self.x,
            y=self.y,
            weights={t.layer_index: t.w for t in traces if t.w is not None},
            dws={t.layer_index: t.dw for t in traces if t.dw is not None},
            learning_rate=self.model.spec.learning_rate,
            outputs=traces[-1].v2,
        )


# --------------------------------------------------------------------- report


def _num(v: float):
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return v


def _unnum(v):
    if isinstance(v, str):
        return float(v.replace("Infinity", "inf"))
    return v


@dataclass(frozen=True)
class LayerSummary:
    layer: int
    kind: str
    activation: Optional[str]
    output_mean: float
    output_variance: float
    weight_mean: Optional[float] = None
    weight_variance: Optional[float] = None
    grad_mean: Optional[float] = None

    @classmethod
    def from_trace(cls, t: LayerTrace) -> "LayerSummary":
        return cls(
            t.layer_index, t.kind, t.activation, mean(t.v2), variance(t.v2),
            None if t.w is None else mean(t.w),
            None if t.w is None else variance(t.w),
            None if t.dw is None else mean(t.dw),
        )

    def to_dict(self) -> dict:
        out = {"layer": self.layer, "kind": self.kind, "activation": self.activation}
        for key in ("output_mean", "output_variance", "weight_mean", "weight_variance", "grad_mean"):
            value = getattr(self, key)
            out[key] = None if value is None else _num(value)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSummary":
        floats = {k: (None if d.get(k) is None else _unnum(d[k]))
                  for k in ("output_mean", "output_variance", "weight_mean", "weight_variance", "grad_mean")}
        return cls(d["layer"], d["kind"], d["activation"], **floats)


@dataclass(frozen=True)
class DiagnosisReport:
    verdict: SymptomCode
    message: Optional[MessageCode]
    steps: int
    layers: tuple = ()
    config: dict = field(default_factory=dict)
    checkers: Optional[tuple] = None
    duration: float = 0.0

    def __post_init__(self):
        if (self.verdict.code == "CM") != (self.message is None):
            raise ValueError("a report carries a message exactly when a symptom was found")

    @property
    def is_correct(self) -> bool:
        return self.verdict.code == "CM"

    def to_dict(self, include_duration: bool = True) -> dict:
        v, m = self.verdict, self.message
        out = {
            "verdict": v.code,
            "symptom": v.name,
            "stage": v.stage,
            "layer": v.layer_index,
            "quantity": v.quantity,
            "epoch": v.epoch,
            "batch": v.batch,
            "description": v.describe(),
            "message_code": None if m is None else m.code,
            "message_layer": None if m is None else m.target_layer,
            "message_text": None if m is None else m.text,
            "checkers": None if self.checkers is None else [
                {"check": c.check, "fired": c.fired, "value": _freeze_value(c.value)} for c in self.checkers
            ],
            "steps": self.steps,
            "layers": [s.to_dict() for s in self.layers],
            "config": self.config,
        }
        if include_duration:
            out["duration"] = self.duration
        return out

    def to_json(self, include_duration: bool = True) -> str:
        return json.dumps(self.to_dict(include_duration), indent=2, allow_nan=False, default=_json_default) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosisReport":
        verdict = SymptomCode(d["verdict"], d["stage"], d["layer"], d["quantity"], d["epoch"], d["batch"])
        message = None if d["message_code"] is None else MessageCode(d["message_code"], d["message_layer"])
        checkers = None
        if d.get("checkers") is not None:
            checkers = tuple(CheckRecord(c["check"], c["fired"], _thaw(c["value"])) for c in d["checkers"])
        return cls(
            verdict=verdict,
            message=message,
            steps=d["steps"],
            layers=tuple(LayerSummary.from_dict(s) for s in d["layers"]),
            config=d["config"],
            checkers=checkers,
            duration=d.get("duration", 0.0),
        )

    @classmethod
    def from_json(cls, text: str) -> "DiagnosisReport":
        return cls.from_dict(json.loads(text))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _freeze_value(value):
    if isinstance(value, float):
        return _num(value)
    if isinstance(value, dict):
        return {k: _freeze_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_freeze_value(v) for v in value]
    return value


def _thaw(value):
    if isinstance(value, str) and value in ("NaN", "Infinity", "-Infinity"):
        return _unnum(value)
    if isinstance(value, dict):
        return {k: _thaw(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_thaw(v) for v in value]
    return value


# ------------------------------------------------------------------ pipeline


def run_diagnosis(spec: ModelSpec, dataset, cfg: Optional[MonitorConfig] = None,
                  explain: bool = False, epochs: Optional[int] = None) -> DiagnosisReport:
    """Build the model, train it under the monitor and map the first symptom to a fix."""
    cfg = cfg or MonitorConfig()
    x, y = (as_tensor(a) for a in dataset)
    started = time.perf_counter()
    root = Rng(spec.seed)
    model = build_model(spec, root.spawn())
    monitor = Monitor(model, x, y, cfg)
    outcome = train(model, x, y, monitor, rng=root.spawn(), epochs=epochs)

    message = None
    checkers = None
    if outcome.stopped:
        verdict = outcome.signal
        trace: list = []
        message = map_symptom(monitor.context, cfg, trace)
        if explain:
            checkers = tuple(trace)
    else:
        verdict = SymptomCode("CM", epoch=outcome.epoch, batch=outcome.batch)
    traces = monitor.last_traces or []
    return DiagnosisReport(
        verdict=verdict,
        message=message,
        steps=outcome.steps,
        layers=tuple(LayerSummary.from_trace(t) for t in traces),
        config=cfg.to_dict(),
        checkers=checkers,
        duration=round(time.perf_counter() - started, 6),
    )
