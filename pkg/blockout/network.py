"""
Network composition, softmax cross-entropy loss and evaluation.

A Network is an ordered stack of layers ending in a single SoftmaxLoss. In train
mode the forward pass draws cluster assignments and caches state for backward; in
infer mode every Blockout layer uses its expected mask and nothing is cached.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from blockout import tensor_core as tc
from blockout.blockout_layer import BlockoutLayer, ClusterParameters, init_layer
from blockout.constants import LAYER_KIND_BLOCKOUT, VARIANT_DENSE, VARIANT_HARD_FIXED, VARIANT_SOFT_LEARNED
from blockout.exceptions import DomainError, LogicError, ShapeError
from blockout.layers import DenseLayer, ReLU, StandardizeLayer, init_dense
from blockout.schemas import LayerSpec
from blockout.tensor_core import RngStream

logger = logging.getLogger(__name__)

MODE_TRAIN = "train"
MODE_INFER = "infer"


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood of the labels under a column-wise softmax.

    Args:
        logits: d x batch class scores
        labels: Integer class per column, each in [0, d)

    Returns:
        (loss, grad) with grad = (softmax - onehot) / batch
    """
    if logits.ndim != 2 or labels.shape != (logits.shape[1],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    num_classes, batch = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if batch and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"softmax_cross_entropy: labels must lie in [0, {num_classes})")

    shifted = logits - logits.max(axis=0, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    log_probs = shifted - log_norm
    columns = np.arange(batch)
    loss = float(-log_probs[labels, columns].mean())

    grad = np.exp(log_probs)
    grad[labels, columns] -= 1.0
    return loss, grad / batch


class SoftmaxLoss:
    def __init__(self, num_classes: int):
        self.num_classes = num_classes


Layer = Union[StandardizeLayer, DenseLayer, BlockoutLayer, ReLU, SoftmaxLoss]


@dataclass
class Parameter:
    """A trainable array with its latest gradient; clamp is set for cluster logits."""

    name: str
    value: np.ndarray
    grad: np.ndarray
    clamp: Optional[ClusterParameters] = None


def _width_in(layer: Layer) -> Optional[int]:
    if isinstance(layer, (DenseLayer, BlockoutLayer)):
        return layer.d_in
    if isinstance(layer, (ReLU, StandardizeLayer)):
        return layer.width
    return layer.num_classes


def _width_out(layer: Layer) -> Optional[int]:
    if isinstance(layer, (DenseLayer, BlockoutLayer)):
        return layer.d_out
    if isinstance(layer, (ReLU, StandardizeLayer)):
        return layer.width
    return layer.num_classes


class Network:
    """
    Ordered layer stack realizing f = a_m ∘ g_m ∘ ... ∘ a_1 ∘ g_1.

    Args:
        layers: Layers in input-to-output order; the last must be the only SoftmaxLoss
    """

    def __init__(self, layers: Sequence[Layer]):
        self.layers: List[Layer] = list(layers)
        if not self.layers or not isinstance(self.layers[-1], SoftmaxLoss):
            raise LogicError("a network must end in a SoftmaxLoss")
        if any(isinstance(layer, SoftmaxLoss) for layer in self.layers[:-1]):
            raise LogicError("a network holds exactly one SoftmaxLoss")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if _width_out(lower) != _width_in(upper):
                raise ShapeError("network chain", (_width_out(lower),), (_width_in(upper),))
        self.mode = MODE_TRAIN
        self.iteration = 0

    @property
    def loss(self) -> SoftmaxLoss:
        return self.layers[-1]

    @property
    def input_dim(self) -> int:
        return _width_in(self.layers[0])

    @property
    def num_classes(self) -> int:
        return self.loss.num_classes

    def blockout_layers(self) -> List[BlockoutLayer]:
        return [layer for layer in self.layers if isinstance(layer, BlockoutLayer)]

    def cluster_parameters(self) -> List[ClusterParameters]:
        """Distinct cluster parameter objects in input-to-output order."""
        seen: dict = {}
        for layer in self.blockout_layers():
            for cluster in (layer.cluster_in, layer.cluster_out):
                seen.setdefault(id(cluster), cluster)
        return list(seen.values())

    @contextmanager
    def inference_mode(self) -> Iterator["Network"]:
        previous, self.mode = self.mode, MODE_INFER
        try:
            yield self
        finally:
            self.mode = previous

    def forward_train(self, x: np.ndarray, rng: Optional[RngStream] = None, draw: bool = True) -> np.ndarray:
        """
        Training forward pass up to the logits.

        Each interface's assignments are drawn once, by the layer that owns them,
        under this pass's iteration number.
        """
        if self.mode != MODE_TRAIN:
            raise LogicError("forward_train requires train mode")
        if draw:
            self.iteration += 1
        activations = x
        for layer in self.layers[:-1]:
            if isinstance(layer, BlockoutLayer):
                activations = layer.forward_train(activations, rng, self.iteration, draw=draw)
            else:
                activations = layer.forward_train(activations)
        return activations

    def forward_infer(self, x: np.ndarray) -> np.ndarray:
        activations = x
        for layer in self.layers[:-1]:
            activations = layer.forward_infer(activations)
        return activations

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Propagate dL/dlogits down the stack; shared dL/dC sums both adjacent layers."""
        for cluster in self.cluster_parameters():
            cluster.zero_grad()
        delta = grad_logits
        for layer in reversed(self.layers[:-1]):
            delta = layer.backpropagate(delta)
        return delta

    def loss_and_gradients(
        self, x: np.ndarray, labels: np.ndarray, rng: Optional[RngStream] = None, draw: bool = True
    ) -> Tuple[float, np.ndarray]:
        """One forward/backward cycle; returns the loss and the training logits."""
        logits = self.forward_train(x, rng, draw=draw)
        loss, grad = softmax_cross_entropy(logits, labels)
        self.backward(grad)
        return loss, logits

    def parameters(self) -> List[Parameter]:
        """Trainable arrays with the gradients of the latest backward pass."""
        params: List[Parameter] = []
        for index, layer in enumerate(self.layers):
            if isinstance(layer, (DenseLayer, BlockoutLayer)):
                for name, value in layer.parameters().items():
                    grad = layer.grads.get(name)
                    if grad is None:
                        grad = np.zeros_like(value)
                    params.append(Parameter(f"layer{index}.{name}", value, grad))
        for cluster in self.cluster_parameters():
            if cluster.learnable and cluster.assignments is not None:
                params.append(Parameter(f"{cluster.name}.logits", cluster.logits, cluster.logit_gradient(), clamp=cluster))
        return params

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.mode != MODE_INFER:
            raise LogicError("predict requires infer mode")
        return tc.argmax_rows(tc.transpose(self.forward_infer(x)))


def build_network(
    input_dim: int,
    num_classes: int,
    layer_specs: Sequence[LayerSpec],
    rng: RngStream,
    variant: str = "hard-learned",
    standardizer: Optional[StandardizeLayer] = None,
) -> Network:
    """
    Assemble a network from layer specs, inserting ReLU between linear layers.

    Consecutive Blockout layers share the cluster parameters of the nodes between
    them. The last spec's width defaults to num_classes. The dense variant builds
    every spec as a plain dense layer of the same width.
    """
    layers: List[Layer] = []
    if standardizer is not None:
        if standardizer.width != input_dim:
            raise ShapeError("standardizer", (standardizer.width,), (input_dim,))
        layers.append(standardizer)

    sampling = variant != VARIANT_SOFT_LEARNED
    learnable = variant != VARIANT_HARD_FIXED
    width_in = input_dim
    previous_blockout: Optional[BlockoutLayer] = None
    for position, spec in enumerate(layer_specs):
        last = position == len(layer_specs) - 1
        width_out = spec.width if spec.width is not None else num_classes
        if last and width_out != num_classes:
            raise ShapeError("output layer", (width_out,), (num_classes,))
        index = len(layers)
        if spec.kind == LAYER_KIND_BLOCKOUT and variant != VARIANT_DENSE:
            shared = previous_blockout.cluster_out if previous_blockout is not None else None
            layer = init_layer(
                width_in,
                width_out,
                spec.clusters,
                rng,
                cluster_in=shared,
                name=f"layer{index}",
                sampling=sampling,
                learnable=learnable,
            )
            previous_blockout = layer
        else:
            layer = init_dense(width_in, width_out, rng)
            previous_blockout = None
        layers.append(layer)
        if not last:
            layers.append(ReLU(width_out))
        width_in = width_out

    layers.append(SoftmaxLoss(num_classes))
    network = Network(layers)
    widths = [_width_out(layer) for layer in layers if isinstance(layer, (DenseLayer, BlockoutLayer))]
    logger.info(f"Built {variant} network: input {input_dim}, widths {widths}, {len(network.cluster_parameters())} cluster interfaces")
    return network


def _count_correct(network: Network, features: np.ndarray, labels: np.ndarray) -> int:
    if len(labels) == 0:
        return 0
    predictions = network.predict(tc.transpose(features))
    return int(np.sum(predictions == labels))


def evaluate(network: Network, dataset, workers: int = 1) -> float:
    """
    Fraction of examples whose argmax prediction equals the label.

    Args:
        network: Network in infer mode
        dataset: Dataset with features n x d and labels
        workers: Thread count; shards are reduced in order so the result is deterministic

    Raises:
        DomainError: If the dataset is empty
        LogicError: If the network is not in infer mode
    """
    n = len(dataset.labels)
    if n == 0:
        raise DomainError("evaluate: dataset is empty")
    if network.mode != MODE_INFER:
        raise LogicError("evaluate requires infer mode")
    bounds = np.linspace(0, n, max(1, min(workers, n)) + 1).astype(int)
    shards = [(dataset.features[lo:hi], dataset.labels[lo:hi]) for lo, hi in zip(bounds, bounds[1:])]
    if len(shards) == 1:
        correct = _count_correct(network, *shards[0])
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            correct = sum(pool.map(lambda shard: _count_correct(network, *shard), shards))
    return correct / n
