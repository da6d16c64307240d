"""
Dense linear algebra and seeded random streams.

Matrices are 2-D float64 numpy arrays in row-major (C) order. Every operation
checks shapes explicitly and raises ShapeError naming both operands; numpy
broadcasting is never relied on.
"""

import hashlib
from typing import Tuple

import numpy as np

from blockout.exceptions import DomainError, ShapeError

DTYPE = np.float64


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """
    Coerce values to a C-contiguous float64 matrix.

    Args:
        values: Array-like with two dimensions
        name: Operand name used in error messages

    Returns:
        float64 ndarray with ndim == 2
    """
    matrix = np.ascontiguousarray(values, dtype=DTYPE)
    if matrix.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", matrix.shape)
    return matrix


def _require_same_shape(operation: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(operation, a.shape, b.shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product; requires a.cols == b.rows."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equally shaped matrices."""
    _require_same_shape("hadamard", a, b)
    return a * b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape("add", a, b)
    return a + b


def subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape("subtract", a, b)
    return a - b


def scale(a: np.ndarray, factor: float) -> np.ndarray:
    return a * float(factor)


def transpose(a: np.ndarray) -> np.ndarray:
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return np.ascontiguousarray(a.T)


def row_sums(a: np.ndarray) -> np.ndarray:
    """Sum over columns; returns a rows x 1 matrix."""
    if a.ndim != 2:
        raise ShapeError("row_sums", a.shape)
    return a.sum(axis=1, keepdims=True)


def col_sums(a: np.ndarray) -> np.ndarray:
    """Sum over rows; returns a 1 x cols matrix."""
    if a.ndim != 2:
        raise ShapeError("col_sums", a.shape)
    return a.sum(axis=0, keepdims=True)


def add_column(a: np.ndarray, column: np.ndarray) -> np.ndarray:
    """Add a length-rows vector to every column of a."""
    if a.ndim != 2 or column.shape != (a.shape[0],):
        raise ShapeError("add_column", a.shape, column.shape)
    return a + column[:, None]


def logistic(x: np.ndarray) -> np.ndarray:
    """Numerically stable sigma(x) = 1 / (1 + exp(-x))."""
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def logistic_grad(x: np.ndarray) -> np.ndarray:
    """Derivative sigma(x) * (1 - sigma(x))."""
    s = logistic(x)
    return s * (1.0 - s)


def logit(p: float) -> float:
    """Inverse of the logistic map for a scalar probability in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"logit requires a probability in (0, 1), got {p!r}")
    return float(np.log(p) - np.log1p(-p))


def argmax_rows(a: np.ndarray) -> np.ndarray:
    """Column index of the maximum in each row; ties resolve to the lowest index."""
    if a.ndim != 2 or a.shape[1] == 0:
        raise ShapeError("argmax_rows", a.shape)
    return np.argmax(a, axis=1)


def is_binary(a: np.ndarray) -> bool:
    return bool(np.all((a == 0.0) | (a == 1.0)))


class RngStream:
    """
    Seeded random stream on numpy's counter-based Philox bit generator.

    The same seed and the same sequence of calls produce the same numbers on every
    platform numpy supports. Child streams are derived from the seed and a name, so
    adding draws to one consumer never shifts another's sequence.
    """

    def __init__(self, seed: int, spawn_key: Tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise DomainError(f"seed must fit in 64 unsigned bits, got {seed!r}")
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, name: str) -> "RngStream":
        """Independent stream keyed by name."""
        key = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
        return RngStream(self.seed, self.spawn_key + (key,))

    def uniform(self, shape: Tuple[int, ...]) -> np.ndarray:
        return self._generator.random(shape, dtype=DTYPE)

    def normal(self, shape: Tuple[int, ...], std: float = 1.0) -> np.ndarray:
        return self._generator.standard_normal(shape, dtype=DTYPE) * std

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)


def bernoulli_sample(p: np.ndarray, rng: RngStream) -> np.ndarray:
    """
    Draw independent Bernoulli variables, entry (i, j) equal to 1 with probability p(i, j).

    Raises:
        DomainError: If any entry of p lies outside [0, 1]
    """
    if p.ndim != 2:
        raise ShapeError("bernoulli_sample", p.shape)
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise DomainError("bernoulli_sample: probabilities must lie in [0, 1]")
    return (rng.uniform(p.shape) < p).astype(DTYPE)
