"""
Blockout layer: weight masks built from per-node cluster memberships.

A Blockout layer multiplies its unconstrained weights elementwise by the mask
(1/k) C_out C_inᵀ, where C_out and C_in are binary node-to-cluster assignment
matrices drawn from learnable probabilities P = sigma(theta). Two Blockout layers
that meet at the same nodes hold one ClusterParameters object between them, so
those nodes are sampled once per iteration and collect gradient from both sides.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from blockout import tensor_core as tc
from blockout.constants import LOGIT_CLAMP
from blockout.exceptions import DomainError, LogicError, ShapeError
from blockout.tensor_core import RngStream

logger = logging.getLogger(__name__)


class ClusterParameters:
    """
    Cluster logits for one interface of nodes, plus the assignments drawn from them.

    Args:
        name: Identifier used in logs, snapshots and analysis file names
        logits: d x k matrix theta; P = sigma(theta)
        learnable: Whether the trainer updates the logits
    """

    def __init__(self, name: str, logits: np.ndarray, learnable: bool = True):
        self.name = name
        self.logits = tc.as_matrix(logits, "cluster logits")
        self.learnable = learnable
        self.assignments: Optional[np.ndarray] = None
        self.relaxed = False
        self.epoch = 0
        self.zero_grad()

    @property
    def num_nodes(self) -> int:
        return self.logits.shape[0]

    @property
    def k(self) -> int:
        return self.logits.shape[1]

    def probabilities(self) -> np.ndarray:
        return tc.logistic(self.logits)

    def _next_epoch(self, epoch: Optional[int]) -> int:
        if epoch is None:
            return self.epoch + 1
        if epoch <= self.epoch:
            raise LogicError(f"{self.name}: assignments already drawn for iteration {epoch}")
        return epoch

    def draw(self, rng: RngStream, epoch: Optional[int] = None) -> np.ndarray:
        """Sample hard assignments C ~ B(1, P) for the given iteration."""
        self.epoch = self._next_epoch(epoch)
        self.assignments = tc.bernoulli_sample(self.probabilities(), rng)
        self.relaxed = False
        self.zero_grad()
        return self.assignments

    def relax(self, epoch: Optional[int] = None) -> np.ndarray:
        """Use the soft probabilities as assignments (C := P) for the given iteration."""
        self.epoch = self._next_epoch(epoch)
        self.assignments = self.probabilities()
        self.relaxed = True
        self.zero_grad()
        return self.assignments

    def assign(self, values: np.ndarray) -> None:
        """Install explicit assignments; real values are accepted."""
        values = tc.as_matrix(values, "assignments")
        if values.shape != self.logits.shape:
            raise ShapeError("assign", self.logits.shape, values.shape)
        self.epoch += 1
        self.assignments = values
        self.relaxed = False
        self.zero_grad()

    def current(self) -> np.ndarray:
        if self.assignments is None:
            raise LogicError(f"{self.name}: no assignments drawn yet")
        return self.assignments

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.logits)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.grad.shape:
            raise ShapeError("accumulate_grad", self.grad.shape, grad.shape)
        self.grad = self.grad + grad

    def logit_gradient(self) -> np.ndarray:
        """
        Chain the accumulated dL/dC through sampling and the logistic map.

        Hard assignments use the masked surrogate dL/dP = dL/dC ⊙ C; relaxed
        assignments are P itself, so dL/dP = dL/dC exactly.
        """
        if self.relaxed:
            grad_p = self.grad
        else:
            grad_p = prob_gradient(self.grad, self.current())
        return tc.hadamard(grad_p, tc.logistic_grad(self.logits))

    def clamp(self) -> None:
        np.clip(self.logits, -LOGIT_CLAMP, LOGIT_CLAMP, out=self.logits)


@dataclass
class LayerForwardState:
    """Values cached by a training forward pass for the matching backward pass."""

    inputs: np.ndarray
    c_out: np.ndarray
    c_in: np.ndarray
    mask: np.ndarray
    epochs: Tuple[int, int]


@dataclass
class BlockoutGradients:
    grad_weights_tilde: np.ndarray
    grad_bias: np.ndarray
    grad_c_out: np.ndarray
    grad_c_in: np.ndarray
    delta_prev: np.ndarray


def _mask(c_out: np.ndarray, c_in: np.ndarray, k: int) -> np.ndarray:
    if c_out.ndim != 2 or c_in.ndim != 2 or c_out.shape[1] != k or c_in.shape[1] != k:
        raise ShapeError("build_mask", c_out.shape, c_in.shape)
    return tc.matmul(c_out, tc.transpose(c_in)) / k


def build_mask(c_out: np.ndarray, c_in: np.ndarray, k: int) -> np.ndarray:
    """
    Parameter mask (1/k) C_out C_inᵀ.

    Entry (t, s) is the number of clusters holding both output node t and input
    node s, divided by k.

    Raises:
        DomainError: If either assignment matrix has a non-binary entry
        ShapeError: If k differs from either matrix's column count
    """
    if not (tc.is_binary(c_out) and tc.is_binary(c_in)):
        raise DomainError("build_mask: cluster assignments must be binary")
    return _mask(c_out, c_in, k)


def prob_gradient(grad_c: np.ndarray, c: np.ndarray) -> np.ndarray:
    """dL/dP = dL/dC ⊙ C: clusters a node was not drawn into receive no gradient."""
    return tc.hadamard(grad_c, c)


class BlockoutLayer:
    """
    Linear layer whose weights are masked by shared cluster assignments.

    Args:
        weights_tilde: d_out x d_in unconstrained weights
        bias: Unmasked bias of length d_out
        cluster_out: Cluster parameters of the output nodes
        cluster_in: Cluster parameters of the input nodes
        owns_input: False when cluster_in belongs to the preceding Blockout layer
        sampling: Draw hard assignments during training; False uses C := P
    """

    def __init__(
        self,
        weights_tilde: np.ndarray,
        bias: np.ndarray,
        cluster_out: ClusterParameters,
        cluster_in: ClusterParameters,
        owns_input: bool = True,
        sampling: bool = True,
    ):
        self.weights_tilde = tc.as_matrix(weights_tilde, "weights_tilde")
        self.bias = np.ascontiguousarray(bias, dtype=tc.DTYPE)
        d_out, d_in = self.weights_tilde.shape
        if self.bias.shape != (d_out,):
            raise ShapeError("blockout bias", self.weights_tilde.shape, self.bias.shape)
        if cluster_out.num_nodes != d_out or cluster_in.num_nodes != d_in or cluster_out.k != cluster_in.k:
            raise ShapeError("blockout clusters", cluster_out.logits.shape, cluster_in.logits.shape)
        self.cluster_out = cluster_out
        self.cluster_in = cluster_in
        self.owns_input = owns_input
        self.sampling = sampling
        self.state: Optional[LayerForwardState] = None
        self.grads: dict = {}

    @property
    def d_in(self) -> int:
        return self.weights_tilde.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights_tilde.shape[0]

    @property
    def k(self) -> int:
        return self.cluster_out.k

    def owned_clusters(self) -> List[ClusterParameters]:
        """Cluster parameters this layer draws; the input side is drawn by its owner."""
        if self.owns_input:
            return [self.cluster_in, self.cluster_out]
        return [self.cluster_out]

    def forward_train(
        self, x: np.ndarray, rng: Optional[RngStream] = None, iteration: Optional[int] = None, draw: bool = True
    ) -> np.ndarray:
        """
        Training pass with the current iteration's assignments.

        Args:
            x: d_in x batch activations
            rng: Stream for Bernoulli draws (unused when sampling is off)
            iteration: Iteration index the draw belongs to
            draw: False reuses assignments already installed on both sides
        """
        if draw:
            for cluster in self.owned_clusters():
                if self.sampling:
                    if rng is None:
                        raise LogicError("forward_train: sampling requires an RngStream")
                    cluster.draw(rng, iteration)
                else:
                    cluster.relax(iteration)
        c_out = self.cluster_out.current()
        c_in = self.cluster_in.current()
        mask = _mask(c_out, c_in, self.k)
        weights = tc.hadamard(self.weights_tilde, mask)
        self.state = LayerForwardState(
            inputs=x, c_out=c_out, c_in=c_in, mask=mask, epochs=(self.cluster_out.epoch, self.cluster_in.epoch)
        )
        return tc.add_column(tc.matmul(weights, x), self.bias)

    def expected_weights(self) -> np.ndarray:
        """Inference weights (1/k) W̃ ⊙ P_out P_inᵀ, the expectation of the training mask."""
        mask = _mask(self.cluster_out.probabilities(), self.cluster_in.probabilities(), self.k)
        return tc.hadamard(self.weights_tilde, mask)

    def forward_infer(self, x: np.ndarray) -> np.ndarray:
        return tc.add_column(tc.matmul(self.expected_weights(), x), self.bias)

    def backward(self, delta: np.ndarray, state: Optional[LayerForwardState] = None) -> BlockoutGradients:
        """
        Gradients of the loss for the weights, bias, both assignment matrices and the input.

        Args:
            delta: d_out x batch gradient of the loss with respect to this layer's output
            state: Forward state; defaults to the one cached by forward_train

        Raises:
            LogicError: If no forward state is cached or the assignments changed since
        """
        state = state if state is not None else self.state
        if state is None:
            raise LogicError("backward called without a matching forward_train")
        if state.epochs != (self.cluster_out.epoch, self.cluster_in.epoch):
            raise LogicError("backward: forward state is stale; assignments were redrawn")
        self.state = None
        if delta.shape != (self.d_out, state.inputs.shape[1]):
            raise ShapeError("blockout backward", delta.shape, (self.d_out, state.inputs.shape[1]))

        grad_weights = tc.matmul(delta, tc.transpose(state.inputs))
        weighted = tc.hadamard(self.weights_tilde, grad_weights)
        return BlockoutGradients(
            grad_weights_tilde=tc.hadamard(grad_weights, state.mask),
            grad_bias=delta.sum(axis=1),
            grad_c_out=tc.matmul(weighted, state.c_in) / self.k,
            grad_c_in=tc.matmul(tc.transpose(weighted), state.c_out) / self.k,
            delta_prev=tc.matmul(tc.transpose(tc.hadamard(self.weights_tilde, state.mask)), delta),
        )

    def backpropagate(self, delta: np.ndarray) -> np.ndarray:
        """Run backward, keep the parameter gradients and hand dL/dC to both cluster sides."""
        result = self.backward(delta)
        self.grads = {"weights_tilde": result.grad_weights_tilde, "bias": result.grad_bias}
        self.cluster_out.accumulate_grad(result.grad_c_out)
        self.cluster_in.accumulate_grad(result.grad_c_in)
        return result.delta_prev

    def parameters(self) -> dict:
        return {"weights_tilde": self.weights_tilde, "bias": self.bias}


def init_layer(
    d_in: int,
    d_out: int,
    k: int,
    rng: RngStream,
    cluster_in: Optional[ClusterParameters] = None,
    name: str = "blockout",
    probability: float = 0.5,
    sampling: bool = True,
    learnable: bool = True,
) -> BlockoutLayer:
    """
    Create a Blockout layer with every cluster probability at its initial value.

    Args:
        d_in: Input width
        d_out: Output width
        k: Number of clusters, 1 <= k <= max(d_in, d_out)
        rng: Stream for the Gaussian weight draw, std sqrt(2 / d_in)
        cluster_in: Output cluster parameters of a preceding Blockout layer to share
        name: Prefix for the cluster parameter names
        probability: Initial membership probability (0.5 gives theta = 0)
        sampling: Hard assignments during training
        learnable: Whether the cluster logits are trained

    Returns:
        Initialized BlockoutLayer with zero bias
    """
    if d_in < 1 or d_out < 1:
        raise DomainError(f"init_layer: dimensions must be positive, got {d_in}x{d_out}")
    if k < 1 or k > max(d_in, d_out):
        raise DomainError(f"init_layer: k must lie in [1, {max(d_in, d_out)}], got {k}")

    theta = 0.0 if probability == 0.5 else tc.logit(probability)
    weights_tilde = rng.normal((d_out, d_in), std=np.sqrt(2.0 / d_in))
    cluster_out = ClusterParameters(f"{name}.out", np.full((d_out, k), theta), learnable=learnable)
    owns_input = cluster_in is None
    if owns_input:
        cluster_in = ClusterParameters(f"{name}.in", np.full((d_in, k), theta), learnable=learnable)
    elif cluster_in.num_nodes != d_in or cluster_in.k != k:
        raise ShapeError("shared cluster parameters", cluster_in.logits.shape, (d_in, k))

    logger.debug(f"Initialized Blockout layer {name}: {d_in} -> {d_out}, k={k}, shared_input={not owns_input}")
    return BlockoutLayer(weights_tilde, np.zeros(d_out), cluster_out, cluster_in, owns_input, sampling)
