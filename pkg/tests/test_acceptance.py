"""Acceptance criteria, one test each. A PASS/FAIL line per criterion is printed
in the terminal summary (see ``pytest_terminal_summary`` in conftest.py)."""

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import act, dense, gradcheck_cases, softmax_head_spec, max_gradient_error
from nndiag import detectors as det
from nndiag.cli import main
from nndiag.corpus import builtin_manifest, run_corpus
from nndiag.datasets import DatasetSpec, generate
from nndiag.detectors import History, MonitorConfig
from nndiag.diagnosis import MessageCode, SymptomCode, map_symptom
from nndiag.engine import ModelSpec, build_model, compute_accuracy, predict, train
from nndiag.monitor import Monitor, run_diagnosis
from nndiag.tensor import Rng

RESULTS = {}
CFG = MonitorConfig()


@contextmanager
def criterion(name):
    RESULTS[name] = "FAIL"
    started = time.perf_counter()
    yield
    RESULTS[name] = f"PASS ({time.perf_counter() - started:.2f}s)"


def test_motivating_example_reproduction():
    with criterion("1 motivating example: NS/BW/7 -> MSG2 at layer 8, 5 seeded runs, < 60 s"):
        started = time.perf_counter()
        datasets = [
            DatasetSpec(generator="blobs", samples=128, features=128, seed=0),
            DatasetSpec(generator="circles", samples=128, features=128, seed=1),
        ]
        for seed in range(5):
            ds = datasets[seed % len(datasets)]
            data = generate(ds)
            reports = [run_diagnosis(softmax_head_spec(seed=seed), data) for _ in range(2)]
            for rep in reports:
                v = rep.verdict
                assert (v.code, v.stage, v.layer_index) == ("NS", "BW", 7)
                assert rep.message == MessageCode("MSG2", 8)
            assert reports[0].to_json(False) == reports[1].to_json(False)
        assert time.perf_counter() - started < 60


def test_gradient_oracle():
    with criterion("2 gradient oracle: >= 20 random models within 1e-4, < 10 s"):
        started = time.perf_counter()
        cases = gradcheck_cases(30)
        combos = set()
        for spec, x, y in cases:
            model = build_model(spec, Rng(spec.seed))
            assert len(model.dense_layers()) <= 3
            assert all(l.units <= 8 for l in spec.layers if l.kind == "dense")
            assert max_gradient_error(model, x, y, h=1e-5) <= 1e-4
            combos.add((spec.layers[1].activation if len(model.dense_layers()) > 1 else None, spec.loss))
        assert len(cases) >= 20
        assert {loss for _, loss in combos} == {"mse", "binary_crossentropy", "categorical_crossentropy"}
        assert time.perf_counter() - started < 10


def _window(det_fn, stream, n=5):
    hist = History(n)
    return [det_fn(v, hist, CFG) for v in stream]


def test_detector_unit_suite():
    with criterion("3 detector suite: all eight detectors, positive/negative fixtures incl. strict boundaries"):
        ucs = lambda v, h, c: det.unchanged_weight(np.full((2, 2), v), h, c)
        # detector 1
        assert det.exploding_tensor(np.array([[np.inf, 0.0]])) and det.exploding_tensor(np.zeros((2, 2)))
        assert not det.exploding_tensor(np.array([[1.0, 2.0]]))
        # detector 2
        assert _window(ucs, [0.4] * 6)[5]
        assert not any(_window(ucs, [float(i) for i in range(12)]))
        # detector 3
        assert det.saturated_activation(np.full((1, 4), 10.0), "sigmoid", CFG)
        assert not det.saturated_activation(np.zeros((1, 4)), "sigmoid", CFG)
        assert not det.saturated_activation(np.array([[6.0] * 5 + [0.0] * 5]), "sigmoid", CFG)
        # detector 4
        assert det.dead_node(np.zeros((1, 10)), "relu", CFG)
        assert not det.dead_node(np.ones((1, 10)), "relu", CFG)
        assert not det.dead_node(np.array([[0.0] * 7 + [1.0] * 3]), "relu", CFG)
        assert det.dead_node(np.array([[0.0] * 8 + [1.0] * 2]), "relu", CFG)
        # detector 5
        y = np.array([[0.0], [1.0]])
        assert not det.out_of_range(np.array([[0.3], [0.7]]), y)
        assert det.out_of_range(np.array([[5.3]]), y) and det.out_of_range(np.array([[-0.2]]), y)
        # detector 6
        assert _window(det.loss_not_decreasing, [0.7] * 10)[5]
        assert not any(_window(det.loss_not_decreasing, [0.5 ** i for i in range(10)]))
        assert _window(det.loss_not_decreasing, [0.5, 0.9] * 3)[5]
        # detector 7
        assert _window(det.accuracy_not_increasing, [0.5] * 6)[5]
        assert not any(_window(det.accuracy_not_increasing, [0.05 * i for i in range(12)]))
        assert _window(det.accuracy_not_increasing, list(np.linspace(0.9, 0.5, 6)))[5]
        # detector 8
        assert det.vanishing_gradient(np.full((2, 2), 1e-9), CFG)
        assert not det.vanishing_gradient(np.full((2, 2), 1e-3), CFG)


def test_window_semantics():
    with criterion("4 window semantics: nothing before step 6, constant streams fire at step 6"):
        rs = np.random.default_rng(0)
        ucs = lambda v, h, c: det.unchanged_weight(np.full((2, 2), v), h, c)
        for det_fn in (ucs, det.loss_not_decreasing, det.accuracy_not_increasing):
            for _ in range(200):
                stream = list(rs.choice([0.0, 0.5, 1.0], size=5)) + list(rs.normal(size=10))
                assert not any(_window(det_fn, stream)[:5])
            for c in (0.0, 0.7, -3.0, 1e6):
                fired = _window(det_fn, [c] * 6)
                assert fired == [False] * 5 + [True]


CORRECT_MODELS = [
    ("blobs", 0.5, [8], "relu", "adam", 20, 1),
    ("blobs", 1.0, [16], "tanh", "rmsprop", 10, 0),
    ("circles", 0.05, [16, 8], "relu", "rmsprop", 20, 0),
    ("circles", 0.1, [16, 8], "relu", "adam", 40, 0),
    ("xor", 0.2, [16], "relu", "adam", 15, 0),
    ("xor", 0.3, [16], "tanh", "rmsprop", 15, 1),
]


def test_correct_model_suite():
    with criterion("5 correct models: >= 5 reach 90% training accuracy with CM"):
        passed = 0
        for gen, noise, hidden, hidden_act, opt, epochs, seed in CORRECT_MODELS:
            x, y = generate(DatasetSpec(generator=gen, samples=200, noise=noise, seed=1))
            assert x.min() >= -1 and x.max() <= 1
            layers = []
            for i, width in enumerate(hidden):
                layers += [dense(width, 2 if i == 0 else None), act(hidden_act)]
            layers += [dense(1), act("sigmoid")]
            spec = ModelSpec(layers=layers, loss="binary_crossentropy", optimizer=opt, learning_rate=1e-2,
                             batch_size=200, epochs=epochs, seed=seed)
            assert run_diagnosis(spec, (x, y)).is_correct
            # same run by hand, to read the trained weights
            root = Rng(seed)
            model = build_model(spec, root.spawn())
            outcome = train(model, x, y, Monitor(model, x, y, CFG), rng=root.spawn())
            assert not outcome.stopped
            if compute_accuracy(predict(model, x), y, "classification") >= 0.9:
                passed += 1
        assert passed >= 5


def test_mapper_totality():
    with criterion("6 mapper totality and the NS/BW/last-dense -> MSG2 at final activation path"):
        from test_diagnosis import EXPECTED_BRANCHES, LAYER_SPECIFIC, all_cases

        reached = {k: set() for k in EXPECTED_BRANCHES}
        for _, s, ctx in all_cases():
            msg = map_symptom(ctx, CFG)
            assert isinstance(msg, MessageCode)
            assert (msg.target_layer is not None) == (msg.code in LAYER_SPECIFIC)
            reached[s.code].add(msg.code)
        assert reached == EXPECTED_BRANCHES
        spec = softmax_head_spec()
        model = build_model(spec, Rng(0))
        from nndiag.diagnosis import DiagnosisContext
        ctx = DiagnosisContext(SymptomCode("NS", "BW", 7, "DW"), spec, np.zeros((2, 128)), np.ones((2, 1)),
                               model.weights(), model.gradients(), spec.learning_rate)
        assert map_symptom(ctx, CFG) == MessageCode("MSG2", 8)


def test_builtin_corpus(capsys):
    with criterion("7 built-in corpus: 6/6 pass, exit 0, < 3 min"):
        started = time.perf_counter()
        assert main(["corpus"]) == 0
        out = capsys.readouterr().out
        assert "6/6 passed" in out
        assert len(run_corpus(builtin_manifest())) == 6
        assert time.perf_counter() - started < 180


def test_determinism(tmp_path):
    with criterion("8 determinism: byte-identical diagnose reports excluding duration"):
        corpus = builtin_manifest().parent
        for model, data in (("single_unit_softmax", "blobs128"), ("tiny_lr", "xor"), ("deep_sigmoid", "blobs")):
            texts = []
            for i in range(2):
                out = tmp_path / f"{model}{i}.json"
                main(["diagnose", "--model", str(corpus / "models" / f"{model}.json"),
                      "--data", str(corpus / "data" / f"{data}.json"), "--out", str(out), "--explain"])
                raw = out.read_text()
                doc = json.loads(raw)
                assert "duration" in doc
                # drop the one line holding the duration and compare the rest byte for byte
                texts.append("\n".join(l for l in raw.splitlines() if not l.lstrip().startswith('"duration"')))
            assert texts[0] == texts[1]
