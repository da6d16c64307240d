from datetime import datetime
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from blockout.constants import (
    LAYER_KIND_BLOCKOUT,
    LAYER_KIND_DENSE,
    VARIANT_HARD_LEARNED,
)
from blockout.exceptions import LogicError


class LayerSpec(BaseModel):
    """One linear layer of the architecture; ReLU is inserted between consecutive layers."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["dense", "blockout"]
    width: Optional[int] = Field(None, gt=0, description="Output width; omitted on the last layer means class count")
    clusters: Optional[int] = Field(None, ge=1, description="Cluster count k for Blockout layers")

    @model_validator(mode="after")
    def check_clusters(self) -> "LayerSpec":
        if self.kind == LAYER_KIND_BLOCKOUT and self.clusters is None:
            raise ValueError("blockout layers require 'clusters'")
        if self.kind == LAYER_KIND_DENSE and self.clusters is not None:
            raise ValueError("dense layers take no 'clusters'")
        return self


def default_layers() -> List[LayerSpec]:
    return [
        LayerSpec(kind="dense", width=64),
        LayerSpec(kind="blockout", width=64, clusters=4),
        LayerSpec(kind="blockout", clusters=4),
    ]


class TrainConfig(BaseModel):
    """Optimization settings for one training run."""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(0.05, ge=0.0, description="Initial learning rate")
    lr_decay: float = Field(0.5, gt=0.0, le=1.0, description="Step decay factor")
    lr_decay_interval: int = Field(1000, ge=1, description="Iterations between decays")
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    batch_size: int = Field(32, ge=1)
    iterations: int = Field(2000, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)
    logit_lr_multiplier: float = Field(1.0, ge=0.0, description="Learning-rate multiplier for cluster logits")
    snapshot_interval: int = Field(100, ge=1, description="Iterations between P snapshots")
    eval_interval: int = Field(100, ge=1, description="Iterations between evaluations")
    log_interval: int = Field(100, ge=1, description="Iterations between progress log lines")

    def learning_rate_at(self, iteration: int) -> float:
        """Step-decayed rate for a 1-based iteration."""
        return self.learning_rate * self.lr_decay ** ((iteration - 1) // self.lr_decay_interval)


class RunConfig(BaseModel):
    """
    Flat run configuration for the command line.

    Unknown keys are rejected so that typos in sweeps fail loudly.
    """

    model_config = ConfigDict(extra="forbid")

    run_id: str = Field("blockout-run", pattern=r"^[A-Za-z0-9_.-]+$")
    output_dir: str = "runs"
    seed: int = Field(0, ge=0, lt=2**64)
    variant: Literal["dense", "soft-learned", "hard-fixed", "hard-learned"] = Field(
        VARIANT_HARD_LEARNED, description="Training variant; dense builds every layer as a plain dense layer"
    )
    layers: List[LayerSpec] = Field(default_factory=default_layers, min_length=1)
    standardize: bool = True

    # Dataset source
    dataset: Literal["synthetic", "file"] = "synthetic"
    superclasses: int = Field(4, ge=1)
    subclasses_per: int = Field(5, ge=1)
    dim: int = Field(32, ge=1)
    train_per_class: int = Field(200, ge=1)
    test_per_class: int = Field(200, ge=1)
    intra_spread: float = Field(0.3, ge=0.0)
    inter_spread: float = Field(3.0, gt=0.0)
    train_path: Optional[str] = None
    test_path: Optional[str] = None

    # Optimization
    learning_rate: float = Field(0.05, ge=0.0)
    lr_decay: float = Field(0.5, gt=0.0, le=1.0)
    lr_decay_interval: int = Field(1000, ge=1)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    batch_size: int = Field(32, ge=1)
    iterations: int = Field(2000, ge=0)
    logit_lr_multiplier: float = Field(1.0, ge=0.0)
    snapshot_interval: int = Field(100, ge=1)
    eval_interval: int = Field(100, ge=1)
    log_interval: int = Field(100, ge=1)

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if self.dataset == "file" and not self.train_path:
            raise ValueError("dataset 'file' requires 'train_path'")
        if self.dataset == "synthetic" and self.batch_size > self.num_classes * self.train_per_class:
            raise ValueError("batch_size exceeds the training set size")
        for index, spec in enumerate(self.layers[:-1]):
            if spec.width is None:
                raise ValueError(f"layers[{index}] needs a 'width'; only the last layer may omit it")
        last = self.layers[-1]
        if self.dataset == "synthetic" and last.width is not None and last.width != self.num_classes:
            raise ValueError(f"last layer width must equal the class count {self.num_classes}")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if lower.kind == upper.kind == LAYER_KIND_BLOCKOUT and lower.clusters != upper.clusters:
                raise ValueError("adjacent blockout layers must use the same 'clusters'")
        return self

    @property
    def num_classes(self) -> int:
        return self.superclasses * self.subclasses_per

    def train_config(self) -> TrainConfig:
        fields = set(TrainConfig.model_fields)
        return TrainConfig(**{name: value for name, value in self.model_dump().items() if name in fields})


# Training log


class IterationRecord(BaseModel):
    iteration: int = Field(..., ge=1)
    loss: float
    train_accuracy: float = Field(..., ge=0.0, le=1.0)
    learning_rate: float


class EvaluationRecord(BaseModel):
    iteration: int = Field(..., ge=0)
    train_accuracy: float = Field(..., ge=0.0, le=1.0)
    test_accuracy: Optional[float] = Field(None, ge=0.0, le=1.0)


class ProbabilitySnapshot(BaseModel):
    """Cluster probabilities P of one interface at one iteration, stored row-major."""

    iteration: int = Field(..., ge=0)
    layer: str
    rows: int = Field(..., ge=1)
    cols: int = Field(..., ge=1)
    values: List[float]

    @model_validator(mode="after")
    def check_size(self) -> "ProbabilitySnapshot":
        if len(self.values) != self.rows * self.cols:
            raise ValueError(f"snapshot holds {len(self.values)} values, expected {self.rows}x{self.cols}")
        return self

    @classmethod
    def from_matrix(cls, iteration: int, layer: str, p: np.ndarray) -> "ProbabilitySnapshot":
        return cls(iteration=iteration, layer=layer, rows=p.shape[0], cols=p.shape[1], values=p.ravel().tolist())

    def matrix(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64).reshape(self.rows, self.cols)


class TrainingLog(BaseModel):
    """Per-iteration loss and accuracy, periodic evaluations and P snapshots of a run."""

    records: List[IterationRecord] = Field(default_factory=list)
    evaluations: List[EvaluationRecord] = Field(default_factory=list)
    snapshots: List[ProbabilitySnapshot] = Field(default_factory=list)

    def next_iteration(self) -> int:
        return self.records[-1].iteration + 1 if self.records else 1

    def append_record(self, record: IterationRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise LogicError(f"iteration {record.iteration} does not follow {self.records[-1].iteration}")
        self.records.append(record)

    def append_evaluation(self, record: EvaluationRecord) -> None:
        if self.evaluations and record.iteration <= self.evaluations[-1].iteration:
            raise LogicError(f"evaluation at {record.iteration} does not follow {self.evaluations[-1].iteration}")
        self.evaluations.append(record)

    def append_snapshot(self, snapshot: ProbabilitySnapshot) -> None:
        for previous in reversed(self.snapshots):
            if previous.layer != snapshot.layer:
                continue
            if (previous.rows, previous.cols) != (snapshot.rows, snapshot.cols):
                raise LogicError(f"snapshot shape of {snapshot.layer} changed")
            if snapshot.iteration <= previous.iteration:
                raise LogicError(f"snapshot of {snapshot.layer} at {snapshot.iteration} is out of order")
            break
        self.snapshots.append(snapshot)

    def layers(self) -> List[str]:
        """Snapshot layer names in first-seen order."""
        return list(dict.fromkeys(s.layer for s in self.snapshots))

    def snapshots_by_layer(self) -> Dict[str, List[ProbabilitySnapshot]]:
        grouped: Dict[str, List[ProbabilitySnapshot]] = {}
        for snapshot in self.snapshots:
            grouped.setdefault(snapshot.layer, []).append(snapshot)
        return grouped


# Run artifacts


class RunManifest(BaseModel):
    """Wall-clock bookkeeping of a run, kept apart from the deterministic training log."""

    run_id: str
    variant: str
    seed: int
    iterations: int
    started_at: datetime
    finished_at: datetime
    train_accuracy: float = Field(..., ge=0.0, le=1.0)
    test_accuracy: Optional[float] = Field(None, ge=0.0, le=1.0)
    artifacts: List[str] = Field(default_factory=list, description="File names written to the run directory")


class ComparisonRecord(BaseModel):
    """Final accuracies of one variant trained with one seed."""

    seed: int
    variant: str
    train_accuracy: float
    test_accuracy: Optional[float] = None
    diverged_fraction: Optional[float] = Field(None, description="Share of last-layer P outside the divergence band")

    @property
    def gap(self) -> Optional[float]:
        if self.test_accuracy is None:
            return None
        return self.train_accuracy - self.test_accuracy
