"""A small deterministic feed-forward trainer with per-batch instrumentation hooks.

Layers are indexed from 1 in the order they appear in the model spec;
activation and dropout layers take an index of their own, as in a Keras
``Sequential`` model.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nndiag.tensor import Rng, ShapeError, Tensor, as_tensor, has_nonfinite

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax", "linear")
LOSSES = ("mse", "binary_crossentropy", "categorical_crossentropy")
OPTIMIZERS = ("sgd", "rmsprop", "adam")
INITS = ("glorot_uniform", "uniform_small", "constant")
LAYER_KINDS = ("dense", "activation", "dropout")
TASKS = ("classification", "regression")


class SpecError(ValueError):
    """Invalid model spec. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: Optional[int] = None
    activation: Optional[str] = None
    rate: Optional[float] = None
    input_dim: Optional[int] = None
    init: str = "glorot_uniform"
    init_scale: float = 0.05
    init_value: float = 0.0
    bias: float = 0.0

    def validate(self, where: str = "layer") -> None:
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"{where}.kind", f"unknown layer kind {self.kind!r}")
        if self.kind == "dense":
            if not isinstance(self.units, int) or self.units < 1:
                raise SpecError(f"{where}.units", "dense units must be an integer >= 1")
            if self.input_dim is not None and (not isinstance(self.input_dim, int) or self.input_dim < 1):
                raise SpecError(f"{where}.input_dim", "input_dim must be an integer >= 1")
            if self.init not in INITS:
                raise SpecError(f"{where}.init", f"unknown initializer {self.init!r}")
            if self.init == "uniform_small" and not self.init_scale > 0:
                raise SpecError(f"{where}.init_scale", "init_scale must be positive")
        elif self.kind == "activation":
            if self.activation not in ACTIVATIONS:
                raise SpecError(f"{where}.activation", f"unknown activation {self.activation!r}")
        elif self.kind == "dropout":
            if self.rate is None or not 0.0 <= self.rate < 1.0:
                raise SpecError(f"{where}.rate", "rate in [0,1)")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    loss: str = "binary_crossentropy"
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    task: str = "classification"
    # Cross-entropy clamps predictions to [eps, 1-eps] when set; off by default
    # so that log(0) surfaces as an invalid loss.
    loss_epsilon: Optional[float] = None
    shuffle: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def validate(self) -> None:
        if not self.layers:
            raise SpecError("layers", "at least one layer is required")
        for i, layer in enumerate(self.layers, start=1):
            layer.validate(f"layers[{i}]")
        dense = [layer for layer in self.layers if layer.kind == "dense"]
        if not dense:
            raise SpecError("layers", "at least one dense layer is required")
        if self.layers[0].kind == "dense" and self.layers[0].input_dim is None:
            raise SpecError("layers[1].input_dim", "the first dense layer must declare input_dim")
        if self.layers[0].kind != "dense" and dense[0].input_dim is None:
            raise SpecError("layers.input_dim", "the first dense layer must declare input_dim")
        if self.loss not in LOSSES:
            raise SpecError("loss", f"unknown loss {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise SpecError("optimizer", f"unknown optimizer {self.optimizer!r}")
        if not (isinstance(self.learning_rate, (int, float)) and self.learning_rate >= 0):
            raise SpecError("learning_rate", "learning_rate must be a non-negative number")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise SpecError("batch_size", "batch_size must be >= 1")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise SpecError("epochs", "epochs must be >= 1")
        if self.task not in TASKS:
            raise SpecError("task", f"unknown task {self.task!r}")
        if self.loss_epsilon is not None and not 0.0 < self.loss_epsilon < 0.5:
            raise SpecError("loss_epsilon", "loss_epsilon must lie in (0, 0.5)")

    @property
    def input_dim(self) -> int:
        return next(layer.input_dim for layer in self.layers if layer.kind == "dense")

    def param_layer_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers, start=1) if layer.kind == "dense"]

    def activation_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers, start=1) if layer.kind == "activation"]


@dataclass(frozen=True)
class LayerTrace:
    """Snapshot of one layer for one batch.

    ``w``/``dw`` hold the kernel with the bias appended as a final row.
    ``v3`` is the gradient handed to the previous layer.
    """

    layer_index: int
    kind: str
    v1: Tensor
    v2: Tensor
    activation: Optional[str] = None
    w: Optional[Tensor] = None
    dw: Optional[Tensor] = None
    v3: Optional[Tensor] = None


@dataclass(frozen=True)
class StepMetrics:
    epoch: int
    batch: int
    loss: float
    accuracy: Optional[float]


def _frozen(a: Tensor) -> Tensor:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


# --------------------------------------------------------------------- layers


class Dense:
    kind = "dense"

    def __init__(self, kernel: Tensor, bias: Tensor):
        self.kernel = kernel
        self.bias = bias
        self.d_kernel = np.zeros_like(kernel)
        self.d_bias = np.zeros_like(bias)
        self._x = None

    @property
    def fan_in(self) -> int:
        return self.kernel.shape[0]

    def packed(self) -> Tensor:
        return np.vstack([self.kernel, self.bias])

    def packed_grad(self) -> Tensor:
        return np.vstack([self.d_kernel, self.d_bias])

    def forward(self, x: Tensor, training: bool, rng: Optional[Rng]) -> tuple[Tensor, Tensor]:
        if x.shape[1] != self.kernel.shape[0]:
            raise ShapeError(
                f"dense layer expects {self.kernel.shape[0]} input columns, got {x.shape[0]}x{x.shape[1]}"
            )
        self._x = x
        with np.errstate(all="ignore"):
            out = x @ self.kernel + self.bias
        return out, out

    def backward(self, dy: Tensor) -> Tensor:
        with np.errstate(all="ignore"):
            self.d_kernel = self._x.T @ dy
            self.d_bias = np.sum(dy, axis=0, keepdims=True)
            return dy @ self.kernel.T


class Activation:
    kind = "activation"

    def __init__(self, name: str):
        self.name = name
        self._out = None
        self._x = None

    def forward(self, x: Tensor, training: bool, rng: Optional[Rng]) -> tuple[Tensor, Tensor]:
        self._x = x
        self._out = activate(self.name, x)
        return x, self._out

    def backward(self, dy: Tensor) -> Tensor:
        s = self._out
        with np.errstate(all="ignore"):
            if self.name == "relu":
                return dy * (self._x > 0)
            if self.name == "sigmoid":
                return dy * s * (1.0 - s)
            if self.name == "tanh":
                return dy * (1.0 - s * s)
            if self.name == "softmax":
                return s * (dy - np.sum(dy * s, axis=1, keepdims=True))
            return dy


class Dropout:
    """Inverted dropout: kept units are scaled by 1/(1-rate) during training."""

    kind = "dropout"

    def __init__(self, rate: float):
        self.rate = rate
        self._mask = None

    def forward(self, x: Tensor, training: bool, rng: Optional[Rng]) -> tuple[Tensor, Tensor]:
        if not training or self.rate == 0.0:
            self._mask = None
            return x, x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = rng.uniform(0.0, 1.0, x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        with np.errstate(all="ignore"):
            return x, x * self._mask

    def backward(self, dy: Tensor) -> Tensor:
        if self._mask is None:
            return dy
        with np.errstate(all="ignore"):
            return dy * self._mask


def activate(name: str, x: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        if name == "relu":
            return np.maximum(x, 0.0)
        if name == "sigmoid":
            return 1.0 / (1.0 + np.exp(-x))
        if name == "tanh":
            return np.tanh(x)
        if name == "softmax":
            z = np.exp(x - np.max(x, axis=1, keepdims=True))
            return z / np.sum(z, axis=1, keepdims=True)
        if name == "linear":
            return np.array(x, dtype=np.float64, copy=True)
    raise ValueError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------- model


@dataclass
class Model:
    spec: ModelSpec
    layers: list

    def dense_layers(self) -> list[tuple[int, Dense]]:
        return [(i, layer) for i, layer in enumerate(self.layers, start=1) if isinstance(layer, Dense)]

    def weights(self) -> dict[int, Tensor]:
        return {i: layer.packed() for i, layer in self.dense_layers()}

    def gradients(self) -> dict[int, Tensor]:
        return {i: layer.packed_grad() for i, layer in self.dense_layers()}


def _init_kernel(spec: LayerSpec, fan_in: int, rng: Rng) -> Tensor:
    shape = (fan_in, spec.units)
    if spec.init == "glorot_uniform":
        limit = np.sqrt(6.0 / (fan_in + spec.units))
        return rng.uniform(-limit, limit, shape)
    if spec.init == "uniform_small":
        return rng.uniform(-spec.init_scale, spec.init_scale, shape)
    return np.full(shape, float(spec.init_value))


def build_model(spec: ModelSpec, rng: Rng) -> Model:
    spec.validate()
    layers = []
    width = spec.input_dim
    for i, ls in enumerate(spec.layers, start=1):
        if ls.kind == "dense":
            if ls.input_dim is not None and ls.input_dim != width:
                raise SpecError(f"layers[{i}].input_dim", f"expected {width}, got {ls.input_dim}")
            kernel = _init_kernel(ls, width, rng)
            bias = np.full((1, ls.units), float(ls.bias))
            layers.append(Dense(kernel, bias))
            width = ls.units
        elif ls.kind == "activation":
            layers.append(Activation(ls.activation))
        else:
            layers.append(Dropout(ls.rate))
    return Model(spec, layers)


def forward(model: Model, x: Tensor, training: bool = True, rng: Optional[Rng] = None) -> list[LayerTrace]:
    traces = []
    h = x
    for i, layer in enumerate(model.layers, start=1):
        v1, v2 = layer.forward(h, training, rng)
        traces.append(
            LayerTrace(
                layer_index=i,
                kind=layer.kind,
                v1=_frozen(v1),
                v2=_frozen(v2),
                activation=layer.name if isinstance(layer, Activation) else None,
                w=_frozen(layer.packed()) if isinstance(layer, Dense) else None,
            )
        )
        h = v2
    return traces


def predict(model: Model, x: Tensor) -> Tensor:
    return forward(model, x, training=False)[-1].v2


# --------------------------------------------------------------------- losses


def _check_pair(pred: Tensor, y: Tensor) -> None:
    if pred.shape != y.shape:
        raise ShapeError(
            f"prediction shape {pred.shape[0]}x{pred.shape[1]} does not match label shape {y.shape[0]}x{y.shape[1]}"
        )


def _xlog(coef: Tensor, p: Tensor) -> Tensor:
    # coef * log(p) with zero-coefficient terms contributing exactly 0
    return np.where(coef == 0.0, 0.0, coef * np.log(p))


def compute_loss(pred: Tensor, y: Tensor, loss_name: str, epsilon: Optional[float] = None) -> float:
    _check_pair(pred, y)
    with np.errstate(all="ignore"):
        if loss_name == "mse":
            return float(np.mean(np.square(pred - y)))
        p = pred if epsilon is None else np.clip(pred, epsilon, 1.0 - epsilon)
        if loss_name == "binary_crossentropy":
            return float(-np.mean(_xlog(y, p) + _xlog(1.0 - y, 1.0 - p)))
        if loss_name == "categorical_crossentropy":
            return float(-np.mean(np.sum(_xlog(y, p), axis=1)))
    raise ValueError(f"unknown loss {loss_name!r}")


def loss_gradient(pred: Tensor, y: Tensor, loss_name: str, epsilon: Optional[float] = None) -> Tensor:
    """Gradient of the batch-mean loss with respect to the predictions."""
    _check_pair(pred, y)
    with np.errstate(all="ignore"):
        if loss_name == "mse":
            return 2.0 * (pred - y) / pred.size
        if epsilon is None:
            p, live = pred, None
        else:
            p = np.clip(pred, epsilon, 1.0 - epsilon)
            live = (pred > epsilon) & (pred < 1.0 - epsilon)
        if loss_name == "binary_crossentropy":
            g = (np.where(1.0 - y == 0.0, 0.0, (1.0 - y) / (1.0 - p)) - np.where(y == 0.0, 0.0, y / p)) / pred.size
        elif loss_name == "categorical_crossentropy":
            g = -np.where(y == 0.0, 0.0, y / p) / pred.shape[0]
        else:
            raise ValueError(f"unknown loss {loss_name!r}")
        return g if live is None else np.where(live, g, 0.0)


def compute_accuracy(pred: Tensor, y: Tensor, task: str) -> Optional[float]:
    if task != "classification":
        return None
    _check_pair(pred, y)
    if has_nonfinite(pred):
        return float("nan")
    if pred.shape[1] == 1:
        correct = (pred > 0.5) == (y > 0.5)
    else:
        correct = np.argmax(pred, axis=1) == np.argmax(y, axis=1)
    return float(np.mean(correct))


def backward(model: Model, traces: list[LayerTrace], y: Tensor) -> list[LayerTrace]:
    """Backpropagate the batch-mean loss through the traces of the latest forward call.

    Returns new traces with ``dw`` (dense layers) and ``v3`` filled in.
    """
    spec = model.spec
    dy = loss_gradient(traces[-1].v2, y, spec.loss, spec.loss_epsilon)
    out = list(traces)
    for pos in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[pos]
        dx = layer.backward(dy)
        extra = {"v3": _frozen(dx)}
        if isinstance(layer, Dense):
            extra["dw"] = _frozen(layer.packed_grad())
        out[pos] = dataclasses.replace(out[pos], **extra)
        dy = dx
    return out


# ----------------------------------------------------------------- optimizers


class SGD:
    name = "sgd"

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, model: Model) -> None:
        for _, layer in model.dense_layers():
            layer.kernel = layer.kernel - self.lr * layer.d_kernel
            layer.bias = layer.bias - self.lr * layer.d_bias


class RMSprop:
    name = "rmsprop"

    def __init__(self, lr: float, rho: float = 0.9, eps: float = 1e-7):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.v: dict = {}

    def _update(self, key, w: Tensor, g: Tensor) -> Tensor:
        v = self.rho * self.v.get(key, np.zeros_like(g)) + (1.0 - self.rho) * g * g
        self.v[key] = v
        return w - self.lr * g / (np.sqrt(v) + self.eps)

    def step(self, model: Model) -> None:
        with np.errstate(all="ignore"):
            for i, layer in model.dense_layers():
                layer.kernel = self._update((i, "kernel"), layer.kernel, layer.d_kernel)
                layer.bias = self._update((i, "bias"), layer.bias, layer.d_bias)


class Adam:
    name = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def _update(self, key, w: Tensor, g: Tensor) -> Tensor:
        m = self.beta1 * self.m.get(key, np.zeros_like(g)) + (1.0 - self.beta1) * g
        v = self.beta2 * self.v.get(key, np.zeros_like(g)) + (1.0 - self.beta2) * g * g
        self.m[key], self.v[key] = m, v
        m_hat = m / (1.0 - self.beta1**self.t)
        v_hat = v / (1.0 - self.beta2**self.t)
        return w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def step(self, model: Model) -> None:
        self.t += 1
        with np.errstate(all="ignore"):
            for i, layer in model.dense_layers():
                layer.kernel = self._update((i, "kernel"), layer.kernel, layer.d_kernel)
                layer.bias = self._update((i, "bias"), layer.bias, layer.d_bias)


def make_optimizer(name: str, lr: float):
    try:
        return {"sgd": SGD, "rmsprop": RMSprop, "adam": Adam}[name](lr)
    except KeyError:
        raise SpecError("optimizer", f"unknown optimizer {name!r}") from None


def optimizer_step(model: Model, optimizer) -> Model:
    optimizer.step(model)
    return model


# ------------------------------------------------------------------- training


@dataclass(frozen=True)
class StepInfo:
    epoch: int
    batch: int
    step: int
    x: Tensor
    y: Tensor


class TrainingHooks:
    """Override any of the three hooks; returning a non-None value stops training."""

    def on_forward(self, traces: list[LayerTrace], info: StepInfo):
        return None

    def on_metrics(self, metrics: StepMetrics, info: StepInfo):
        return None

    def on_backward(self, traces: list[LayerTrace], info: StepInfo):
        return None


@dataclass
class TrainOutcome:
    signal: object = None
    stage: Optional[str] = None
    epoch: int = 0
    batch: int = 0
    steps: int = 0
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)

    @property
    def stopped(self) -> bool:
        return self.signal is not None

    @property
    def verdict(self):
        return self.signal if self.stopped else "CM"


def iter_batches(n: int, batch_size: int, order: Optional[np.ndarray] = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def train(model: Model, x, y, hooks: Optional[TrainingHooks] = None, rng: Optional[Rng] = None,
          optimizer=None, epochs: Optional[int] = None) -> TrainOutcome:
    spec = model.spec
    x, y = as_tensor(x), as_tensor(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"inputs have {x.shape[0]} rows but labels have {y.shape[0]}")
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"model expects {spec.input_dim} input columns, data has {x.shape[1]}")
    hooks = hooks or TrainingHooks()
    rng = rng or Rng(spec.seed)
    optimizer = optimizer or make_optimizer(spec.optimizer, spec.learning_rate)
    outcome = TrainOutcome()
    step = 0
    for epoch in range(1, (epochs or spec.epochs) + 1):
        order = rng.permutation(x.shape[0]) if spec.shuffle else None
        for b, rows in enumerate(iter_batches(x.shape[0], spec.batch_size, order), start=1):
            step += 1
            info = StepInfo(epoch, b, step, x[rows], y[rows])
            outcome.epoch, outcome.batch, outcome.steps = epoch, b, step

            traces = forward(model, info.x, training=True, rng=rng)
            signal = hooks.on_forward(traces, info)
            if signal is not None:
                outcome.signal, outcome.stage = signal, "forward"
                return outcome

            pred = traces[-1].v2
            metrics = StepMetrics(
                epoch, b,
                compute_loss(pred, info.y, spec.loss, spec.loss_epsilon),
                compute_accuracy(pred, info.y, spec.task),
            )
            outcome.losses.append(metrics.loss)
            outcome.accuracies.append(metrics.accuracy)
            signal = hooks.on_metrics(metrics, info)
            if signal is not None:
                outcome.signal, outcome.stage = signal, "metrics"
                return outcome

            traces = backward(model, traces, info.y)
            signal = hooks.on_backward(traces, info)
            if signal is not None:
                outcome.signal, outcome.stage = signal, "backward"
                return outcome

            optimizer.step(model)
    return outcome
