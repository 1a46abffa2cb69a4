"""Dense 2-D float64 tensors, summary statistics and a seeded RNG.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and ndim 2.
Reductions go through numpy's fixed pairwise summation, so results are
bit-identical between runs on identical inputs.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    pass


def as_tensor(values) -> Tensor:
    t = np.array(values, dtype=np.float64)
    if t.ndim == 0:
        t = t.reshape(1, 1)
    elif t.ndim == 1:
        t = t.reshape(1, -1)
    if t.ndim != 2:
        raise ShapeError(f"expected a 2-D tensor, got shape {t.shape}")
    if t.shape[0] < 1 or t.shape[1] < 1:
        raise ShapeError(f"tensor must have at least one row and column, got {t.shape}")
    return t


def mean(t: Tensor) -> float:
    with np.errstate(invalid="ignore", over="ignore"):
        return float(np.mean(t))


def variance(t: Tensor) -> float:
    """Population variance (divides by the element count)."""
    with np.errstate(invalid="ignore", over="ignore"):
        return float(np.var(t))


def has_nonfinite(t: Tensor) -> bool:
    return not bool(np.all(np.isfinite(t)))


def all_zero(t: Tensor) -> bool:
    return bool(np.all(t == 0.0))


def frobenius_norm(t: Tensor) -> float:
    with np.errstate(invalid="ignore", over="ignore"):
        return float(np.sqrt(np.sum(np.square(t))))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape[0]}x{a.shape[1]} and {b.shape[0]}x{b.shape[1]}")
    return a + b


def transpose(t: Tensor) -> Tensor:
    return np.ascontiguousarray(t.T)


def apply(t: Tensor, fn) -> Tensor:
    """Elementwise map; ``fn`` receives and returns an ndarray."""
    out = np.asarray(fn(t), dtype=np.float64)
    if out.shape != t.shape:
        raise ShapeError(f"elementwise map changed shape {t.shape} -> {out.shape}")
    return out


class Rng:
    """Seeded PCG64 stream. ``spawn`` yields independent child streams."""

    algorithm = "pcg64"

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self) -> "Rng":
        return Rng(self._seq.spawn(1)[0])

    def uniform(self, low: float, high: float, shape) -> Tensor:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, loc: float, scale: float, shape) -> Tensor:
        return self._gen.normal(loc, scale, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
