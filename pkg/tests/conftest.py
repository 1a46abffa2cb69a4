import numpy as np
import pytest

from nndiag.engine import LayerSpec, ModelSpec


def dense(units, input_dim=None, **kw):
    return LayerSpec("dense", units=units, input_dim=input_dim, **kw)


def act(name):
    return LayerSpec("activation", activation=name)


def softmax_head_spec(seed=0, **kw):
    layers = [
        dense(50, 128), act("relu"), LayerSpec("dropout", rate=0.2),
        dense(50), act("relu"), LayerSpec("dropout", rate=0.2),
        dense(1), act("softmax"),
    ]
    opts = dict(loss="binary_crossentropy", optimizer="rmsprop", learning_rate=1e-3,
                batch_size=32, epochs=2, seed=seed, loss_epsilon=1e-7)
    opts.update(kw)
    return ModelSpec(layers=layers, **opts)


def sigmoid_chain(depth=10, width=4, input_dim=4, **kw):
    layers = []
    for i in range(depth):
        layers += [dense(1 if i == depth - 1 else width, input_dim if i == 0 else None), act("sigmoid")]
    opts = dict(loss="binary_crossentropy", optimizer="sgd", learning_rate=0.01, batch_size=32, epochs=1)
    opts.update(kw)
    return ModelSpec(layers=layers, **opts)


@pytest.fixture
def binary_blobs():
    from nndiag.datasets import DatasetSpec, generate
    return generate(DatasetSpec(generator="blobs", samples=200, features=4, noise=1.0, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


HIDDEN_ACTS = ("relu", "sigmoid", "tanh", "linear", "softmax")
HEADS = {"binary_crossentropy": "sigmoid", "categorical_crossentropy": "softmax", "mse": None}


def random_gradcheck_spec(rs, hidden_act, loss):
    """Up to 3 dense layers of at most 8 units, with a head that suits ``loss``."""
    n_dense = int(rs.integers(1, 4))
    n_in = int(rs.integers(1, 9))
    n_out = 1 if loss == "binary_crossentropy" else int(rs.integers(2, 5))
    layers = []
    bias = lambda: float(rs.uniform(-0.5, 0.5))
    for i in range(n_dense - 1):
        layers += [dense(int(rs.integers(1, 9)), n_in if i == 0 else None, bias=bias()), act(hidden_act)]
    layers.append(dense(n_out, n_in if n_dense == 1 else None, bias=bias()))
    head = HEADS[loss] or ("linear" if rs.random() < 0.5 else hidden_act)
    layers.append(act(head))
    return ModelSpec(layers=layers, loss=loss, seed=int(rs.integers(0, 2**31)))


def random_labels(rs, n, width, loss):
    if loss == "binary_crossentropy":
        return rs.integers(0, 2, size=(n, 1)).astype(float)
    if loss == "categorical_crossentropy":
        return np.eye(width)[rs.integers(0, width, size=n)]
    return rs.normal(size=(n, width))


def max_gradient_error(model, x, y, h=1e-5):
    """Largest relative error between analytic dw and central differences over all dense layers.

    Relative error per layer is ||a - n|| / max(||a|| + ||n||, 1e-10).
    """
    from nndiag.engine import backward, compute_loss, forward, predict

    spec = model.spec
    traces = backward(model, forward(model, x, training=False), y)
    analytic = {t.layer_index: t.dw for t in traces if t.dw is not None}
    worst = 0.0
    for idx, layer in model.dense_layers():
        numeric = np.zeros_like(analytic[idx])
        for arr, row_off in ((layer.kernel, 0), (layer.bias, layer.kernel.shape[0])):
            for r in range(arr.shape[0]):
                for c in range(arr.shape[1]):
                    keep = arr[r, c]
                    arr[r, c] = keep + h
                    up = compute_loss(predict(model, x), y, spec.loss)
                    arr[r, c] = keep - h
                    down = compute_loss(predict(model, x), y, spec.loss)
                    arr[r, c] = keep
                    numeric[row_off + r, c] = (up - down) / (2 * h)
        a = analytic[idx]
        err = np.linalg.norm(a - numeric) / max(np.linalg.norm(a) + np.linalg.norm(numeric), 1e-10)
        worst = max(worst, float(err))
    return worst


def near_relu_kink(spec, x, margin=1e-3):
    """True if any relu input lies within ``margin`` of 0, where central differences are invalid."""
    from nndiag.engine import build_model, forward
    from nndiag.tensor import Rng

    traces = forward(build_model(spec, Rng(spec.seed)), x, training=False)
    return any(t.activation == "relu" and np.min(np.abs(t.v1)) < margin for t in traces)


def gradcheck_cases(count, seed=2024):
    """``count`` random (spec, x, y) triples cycling through every activation/loss pairing.

    Instances that put a relu input next to its kink are redrawn.
    """
    from nndiag.engine import LOSSES

    rs = np.random.default_rng(seed)
    combos = [(a, l) for a in HIDDEN_ACTS for l in LOSSES]
    out = []
    while len(out) < count:
        hidden_act, loss = combos[len(out) % len(combos)]
        spec = random_gradcheck_spec(rs, hidden_act, loss)
        n = int(rs.integers(2, 7))
        x = rs.normal(size=(n, spec.input_dim))
        if near_relu_kink(spec, x):
            continue
        width = [l for l in spec.layers if l.kind == "dense"][-1].units
        out.append((spec, x, random_labels(rs, n, width, loss)))
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in mod.RESULTS.items():
        terminalreporter.write_line(f"{status.split()[0]:<5} {name} {' '.join(status.split()[1:])}")
