"""
Companion layers for Blockout networks: plain dense, ReLU and input standardization.
"""

from typing import Optional

import numpy as np

from blockout import tensor_core as tc
from blockout.exceptions import DomainError, LogicError, ShapeError
from blockout.tensor_core import RngStream


class DenseLayer:
    """Unmasked fully-connected layer g(x) = W x + b."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = tc.as_matrix(weights, "weights")
        self.bias = np.ascontiguousarray(bias, dtype=tc.DTYPE)
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("dense bias", self.weights.shape, self.bias.shape)
        self._inputs: Optional[np.ndarray] = None
        self.grads: dict = {}

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]

    def forward_train(self, x: np.ndarray) -> np.ndarray:
        self._inputs = x
        return self.forward_infer(x)

    def forward_infer(self, x: np.ndarray) -> np.ndarray:
        return tc.add_column(tc.matmul(self.weights, x), self.bias)

    def backpropagate(self, delta: np.ndarray) -> np.ndarray:
        if self._inputs is None:
            raise LogicError("dense backward called without a matching forward_train")
        self.grads = {
            "weights": tc.matmul(delta, tc.transpose(self._inputs)),
            "bias": delta.sum(axis=1),
        }
        self._inputs = None
        return tc.matmul(tc.transpose(self.weights), delta)

    def parameters(self) -> dict:
        return {"weights": self.weights, "bias": self.bias}


def init_dense(d_in: int, d_out: int, rng: RngStream) -> DenseLayer:
    """Dense layer with Gaussian weights of std sqrt(2 / d_in) and zero bias."""
    if d_in < 1 or d_out < 1:
        raise DomainError(f"init_dense: dimensions must be positive, got {d_in}x{d_out}")
    return DenseLayer(rng.normal((d_out, d_in), std=np.sqrt(2.0 / d_in)), np.zeros(d_out))


class ReLU:
    def __init__(self, width: int):
        self.width = width
        self._active: Optional[np.ndarray] = None

    def forward_train(self, x: np.ndarray) -> np.ndarray:
        self._active = x > 0.0
        return np.where(self._active, x, 0.0)

    def forward_infer(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)

    def backpropagate(self, delta: np.ndarray) -> np.ndarray:
        if self._active is None:
            raise LogicError("relu backward called without a matching forward_train")
        active, self._active = self._active, None
        return np.where(active, delta, 0.0)


class StandardizeLayer:
    """
    Frozen per-dimension standardization (x - mean) / scale.

    Fit on the training split and stored in checkpoints so raw feature files can
    be evaluated directly.
    """

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        self.mean = np.ascontiguousarray(mean, dtype=tc.DTYPE)
        self.scale = np.ascontiguousarray(scale, dtype=tc.DTYPE)
        if self.mean.ndim != 1 or self.mean.shape != self.scale.shape:
            raise ShapeError("standardize", self.mean.shape, self.scale.shape)
        if not np.all(self.scale > 0.0):
            raise DomainError("standardize: scale entries must be positive")

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    def forward_train(self, x: np.ndarray) -> np.ndarray:
        return self.forward_infer(x)

    def forward_infer(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.width:
            raise ShapeError("standardize", x.shape, self.mean.shape)
        return (x - self.mean[:, None]) / self.scale[:, None]

    def backpropagate(self, delta: np.ndarray) -> np.ndarray:
        return delta / self.scale[:, None]
