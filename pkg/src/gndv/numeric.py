"""Dense float64 kernels and a reproducible random source.

Matrices are plain C-contiguous ``numpy.float64`` arrays (row-major).

The random source is SplitMix64: the i-th 64-bit draw of a source seeded
with ``s`` is ``mix(s + i * 0x9E3779B97F4A7C15)`` (i = 1, 2, ...), so a
source is fully described by ``(seed, counter)``. Standard normals come
from the Box-Muller transform over consecutive draw pairs::

    u1 = ((a >> 11) + 1) / 2**53        # in (0, 1]
    u2 = (b >> 11) / 2**53              # in [0, 1)
    z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)

Matrices are filled row-major from the ``z0, z1, z0, z1, ...`` stream; an
odd request discards the final ``z1``. Child sources are derived with
:meth:`RandomSource.fork`, which seeds the child with the parent's next draw.
"""
from __future__ import annotations

import numpy as np

from . import kernels

ELEMENTWISE_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def as_matrix(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return np.ascontiguousarray(a @ b)


def elementwise(a, b, op: str) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch for {op}: {a.shape} vs {b.shape}")
    try:
        fn = ELEMENTWISE_OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


class RandomSource:
    """Single-owner SplitMix64 stream. Not safe to share between threads."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, counter={self.counter})"

    def bits(self, n: int) -> np.ndarray:
        out = kernels.splitmix64_fill(self.seed, self.counter, n)
        self.counter += n
        return out

    def next_u64(self) -> int:
        return int(self.bits(1)[0])

    def fork(self) -> "RandomSource":
        return RandomSource(self.next_u64())

    def uniform(self, size: int) -> np.ndarray:
        """Uniform doubles in [0, 1) with 53 random bits each."""
        return (self.bits(size) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, size: int) -> np.ndarray:
        pairs = (size + 1) // 2
        return kernels.box_muller(self.bits(2 * pairs))[:size]

    def integer_below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        if bound < 1:
            raise ValueError("bound must be >= 1")
        threshold = (-bound) % (1 << 64) % bound
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % bound

    def permutation(self, n: int) -> np.ndarray:
        perm, self.counter = kernels.permutation(self.seed, self.counter, n)
        return perm


def gaussian_sample(rng: RandomSource, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
    return rng.normal(rows * cols).reshape(rows, cols)
