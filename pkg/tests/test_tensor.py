import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nndiag.tensor import (
    Rng, ShapeError, add, all_zero, apply, as_tensor, frobenius_norm, has_nonfinite,
    matmul, mean, transpose, variance,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
small_tensors = st.integers(1, 6).flatmap(
    lambda r: st.integers(1, 6).flatmap(lambda c: arrays(np.float64, (r, c), elements=finite))
)


def test_mean_examples():
    assert mean(as_tensor([[1, 2], [3, 4]])) == 2.5
    assert mean(as_tensor([[0, 0]])) == 0.0
    assert math.isnan(mean(as_tensor([[math.nan, 1]])))


@pytest.mark.parametrize("c", [0.0, -3.5, 7.0, 1e10])
def test_variance_of_constant_is_zero(c):
    assert variance(np.full((1, 3), c)) == 0.0


def test_variance_arithmetic():
    assert variance(as_tensor([[1, 3]])) == 1.0


def test_variance_matches_two_pass_oracle(rng):
    t = rng.normal(size=(4, 4))
    vals = [float(v) for v in t.ravel()]
    m = sum(vals) / len(vals)
    oracle = sum((v - m) ** 2 for v in vals) / len(vals)
    assert abs(variance(t) - oracle) <= 1e-12


def test_has_nonfinite():
    assert not has_nonfinite(as_tensor([[1, 2]]))
    assert has_nonfinite(as_tensor([[math.inf, 0]]))
    with np.errstate(over="ignore"):
        overflowed = np.array([[1e308]]) + np.array([[1e308]])
    assert has_nonfinite(overflowed)


def test_all_zero():
    assert all_zero(np.zeros((2, 2)))
    assert not all_zero(as_tensor([[0, 1e-300]]))


def test_frobenius_norm(rng):
    assert frobenius_norm(as_tensor([[3, 4]])) == 5.0
    assert frobenius_norm(np.zeros((3, 2))) == 0.0
    t = rng.normal(size=(3, 3))
    oracle = math.sqrt(sum(float(v) * float(v) for v in t.ravel()))
    assert abs(frobenius_norm(t) - oracle) <= 1e-12


def test_linear_algebra(rng):
    a = rng.normal(size=(3, 3))
    assert np.array_equal(matmul(np.eye(3), a), a)
    assert np.array_equal(add(a, np.zeros_like(a)), a)
    assert np.array_equal(transpose(transpose(a)), a)
    assert np.array_equal(apply(a, np.abs), np.abs(a))


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match="2x3 by 4x2"):
        matmul(np.ones((2, 3)), np.ones((4, 2)))
    with pytest.raises(ShapeError):
        add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        apply(np.ones((2, 2)), lambda t: t.ravel())


def test_as_tensor_is_2d():
    assert as_tensor(3.0).shape == (1, 1)
    assert as_tensor([1, 2, 3]).shape == (1, 3)
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((2, 2, 2)))
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((0, 3)))


def test_rng_is_reproducible_and_spawns_independent_streams():
    a, b = Rng(5), Rng(5)
    assert np.array_equal(a.normal(0, 1, (3, 3)), b.normal(0, 1, (3, 3)))
    c1, c2 = Rng(5).spawn(), Rng(5).spawn()
    assert np.array_equal(c1.uniform(0, 1, 4), c2.uniform(0, 1, 4))
    root = Rng(5)
    assert not np.array_equal(root.spawn().uniform(0, 1, 4), root.spawn().uniform(0, 1, 4))


@settings(max_examples=60, deadline=None)
@given(small_tensors, st.randoms(use_true_random=False))
def test_statistics_are_permutation_invariant(t, random):
    flat = list(t.ravel())
    random.shuffle(flat)
    p = np.array(flat).reshape(t.shape)
    scale = max(1.0, float(np.max(np.abs(t))))
    assert math.isclose(mean(p), mean(t), rel_tol=1e-9, abs_tol=1e-9 * scale)
    assert math.isclose(variance(p), variance(t), rel_tol=1e-9, abs_tol=1e-9 * scale * scale)
    assert math.isclose(frobenius_norm(p), frobenius_norm(t), rel_tol=1e-12, abs_tol=1e-300)


@settings(max_examples=60, deadline=None)
@given(small_tensors)
def test_variance_nonnegative_and_deterministic(t):
    assert variance(t) >= 0.0
    assert variance(t) == variance(t.copy())
    assert mean(t) == mean(t.copy())
