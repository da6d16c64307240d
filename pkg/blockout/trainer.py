"""
Mini-batch training loop for Blockout networks.

Each iteration draws the cluster assignments, masks the weights, evaluates the
empirical risk on the batch, back-propagates through weights and cluster
probabilities, and applies momentum SGD with a step-decayed learning rate.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from blockout.data import BatchIterator, Dataset
from blockout.exceptions import DomainError, NonFiniteLossError
from blockout.network import Network, Parameter, evaluate
from blockout.schemas import (
    EvaluationRecord,
    IterationRecord,
    ProbabilitySnapshot,
    TrainConfig,
    TrainingLog,
)
from blockout.tensor_core import RngStream

logger = logging.getLogger(__name__)


class MomentumSGD:
    """Momentum SGD: v <- mu v - lr g; p <- p + v. Velocities are keyed by parameter name."""

    def __init__(self, momentum: float, logit_lr_multiplier: float = 1.0):
        self.momentum = momentum
        self.logit_lr_multiplier = logit_lr_multiplier
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, param: Parameter, learning_rate: float) -> None:
        rate = learning_rate * (self.logit_lr_multiplier if param.clamp is not None else 1.0)
        velocity = self.velocity.get(param.name)
        if velocity is None:
            velocity = np.zeros_like(param.value)
        velocity = self.momentum * velocity - rate * param.grad
        self.velocity[param.name] = velocity
        param.value += velocity
        if param.clamp is not None:
            param.clamp.clamp()


def _largest_gradient(network: Network) -> Tuple[str, float]:
    worst_name, worst = "none", 0.0
    for param in network.parameters():
        magnitude = float(np.max(np.abs(param.grad))) if param.grad.size else 0.0
        if not np.isfinite(magnitude):
            return param.name, magnitude
        if magnitude > worst:
            worst_name, worst = param.name, magnitude
    return worst_name, worst


def train_iteration(
    network: Network,
    batch: Tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    rng: RngStream,
    log: TrainingLog,
    optimizer: MomentumSGD,
) -> Network:
    """
    One forward/backward/update cycle on a mini-batch.

    Args:
        network: Network in train mode
        batch: (features d x B, labels length B)
        config: Learning-rate schedule and optimizer settings
        rng: Stream for the cluster assignment draws
        log: Receives the iteration's loss and batch accuracy
        optimizer: Holds the momentum buffers across iterations

    Raises:
        NonFiniteLossError: If the batch loss is NaN or infinite
    """
    iteration = log.next_iteration()
    features, labels = batch
    loss, logits = network.loss_and_gradients(features, labels, rng)
    if not np.isfinite(loss):
        layer, max_grad = _largest_gradient(network)
        logger.error(f"Non-finite loss at iteration {iteration} (layer {layer}, max |grad| {max_grad})")
        raise NonFiniteLossError(iteration, layer, max_grad)

    learning_rate = config.learning_rate_at(iteration)
    for param in network.parameters():
        optimizer.step(param, learning_rate)

    accuracy = float(np.mean(np.argmax(logits, axis=0) == labels))
    log.append_record(
        IterationRecord(iteration=iteration, loss=loss, train_accuracy=accuracy, learning_rate=learning_rate)
    )
    return network


class Trainer:
    """
    Drives a full training run and fills the TrainingLog.

    Args:
        network: Freshly built network
        config: Training configuration
        rng: Root stream; batches and cluster draws get independent children
        eval_workers: Threads for periodic evaluation
    """

    def __init__(self, network: Network, config: TrainConfig, rng: RngStream, eval_workers: int = 1):
        self.network = network
        self.config = config
        self.batch_rng = rng.child("batches")
        self.cluster_rng = rng.child("clusters")
        self.eval_workers = eval_workers
        self.optimizer = MomentumSGD(config.momentum, config.logit_lr_multiplier)
        self.log = TrainingLog()

    def snapshot(self, iteration: int) -> None:
        for cluster in self.network.cluster_parameters():
            self.log.append_snapshot(ProbabilitySnapshot.from_matrix(iteration, cluster.name, cluster.probabilities()))

    def evaluate(self, iteration: int, train_set: Dataset, test_set: Optional[Dataset]) -> EvaluationRecord:
        with self.network.inference_mode():
            train_accuracy = evaluate(self.network, train_set, self.eval_workers)
            test_accuracy = evaluate(self.network, test_set, self.eval_workers) if test_set is not None else None
        record = EvaluationRecord(iteration=iteration, train_accuracy=train_accuracy, test_accuracy=test_accuracy)
        self.log.append_evaluation(record)
        logger.info(f"Evaluation at iteration {iteration}: train accuracy {train_accuracy:.4f}, test accuracy {test_accuracy}")
        return record

    def run(self, train_set: Dataset, test_set: Optional[Dataset] = None) -> TrainingLog:
        config = self.config
        if config.batch_size > len(train_set.labels):
            raise DomainError(f"batch_size {config.batch_size} exceeds training set size {len(train_set.labels)}")
        batches = BatchIterator(train_set, config.batch_size, self.batch_rng)
        self.snapshot(0)
        logger.info(f"Training for {config.iterations} iterations, batch size {config.batch_size}")

        for iteration in range(1, config.iterations + 1):
            train_iteration(self.network, batches.next_batch(), config, self.cluster_rng, self.log, self.optimizer)
            last = iteration == config.iterations
            if iteration % config.log_interval == 0 or last:
                record = self.log.records[-1]
                logger.info(
                    f"Iteration {iteration}: loss {record.loss:.4f}, batch accuracy {record.train_accuracy:.3f}, "
                    f"lr {record.learning_rate:.5f}"
                )
            if iteration % config.snapshot_interval == 0 or last:
                self.snapshot(iteration)
            if iteration % config.eval_interval == 0 or last:
                self.evaluate(iteration, train_set, test_set)
        return self.log
