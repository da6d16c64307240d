"""
Run orchestration shared by the command line: dataset preparation, a single
training run, and the multi-seed comparison of the dense baseline against the
three Blockout variants.
"""

import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from statistics import median
from typing import List, Optional, Sequence, Tuple

import numpy as np

from blockout.analysis import analysis_path, divergence_fraction
from blockout.constants import ALL_LAYERS, ANALYSIS_COMPARE, COMPARE_VARIANTS
from blockout.data import Dataset, fit_standardizer, generate_hierarchical, load_binary, stratified_split
from blockout.exceptions import DomainError
from blockout.layers import StandardizeLayer
from blockout.network import Network, build_network
from blockout.schemas import ComparisonRecord, RunConfig, TrainingLog
from blockout.shared.utils import utcnow, write_csv
from blockout.tensor_core import RngStream
from blockout.trainer import Trainer

logger = logging.getLogger(__name__)

COMPARE_HEADER = ("seed", "variant", "train_accuracy", "test_accuracy", "gap", "diverged_fraction")


@dataclass
class RunResult:
    config: RunConfig
    network: Network
    log: TrainingLog
    train_accuracy: float
    test_accuracy: Optional[float]
    started_at: datetime
    finished_at: datetime


def prepare_datasets(config: RunConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """Build or load the train and test splits a run config describes."""
    if config.dataset == "file":
        train_set = load_binary(config.train_path)
        test_set = load_binary(config.test_path) if config.test_path else None
        if test_set is not None and (test_set.dim, test_set.num_classes) != (train_set.dim, train_set.num_classes):
            raise DomainError(f"test file {config.test_path} does not match the training file's shape")
        return train_set, test_set

    full = generate_hierarchical(
        seed=config.seed,
        superclasses=config.superclasses,
        subclasses_per=config.subclasses_per,
        dim=config.dim,
        per_class=config.train_per_class + config.test_per_class,
        intra_spread=config.intra_spread,
        inter_spread=config.inter_spread,
    )
    return stratified_split(full, config.test_per_class, RngStream(config.seed).child("split"))


def execute_run(config: RunConfig, eval_workers: int = 1) -> RunResult:
    """
    Train one network end to end.

    The root stream of config.seed feeds independent children for weight
    initialization and for training, so a config reproduces its run exactly.
    """
    started_at = utcnow()
    train_set, test_set = prepare_datasets(config)
    standardizer: Optional[StandardizeLayer] = fit_standardizer(train_set) if config.standardize else None

    root = RngStream(config.seed)
    network = build_network(
        train_set.dim, train_set.num_classes, config.layers, root.child("init"), config.variant, standardizer
    )
    trainer = Trainer(network, config.train_config(), root.child("train"), eval_workers)
    log = trainer.run(train_set, test_set)
    final = log.evaluations[-1] if log.evaluations else trainer.evaluate(0, train_set, test_set)

    return RunResult(
        config=config,
        network=network,
        log=log,
        train_accuracy=final.train_accuracy,
        test_accuracy=final.test_accuracy,
        started_at=started_at,
        finished_at=utcnow(),
    )


def last_layer_divergence(network: Network) -> Optional[float]:
    """Divergence fraction over both cluster interfaces of the last Blockout layer."""
    blockout_layers = network.blockout_layers()
    if not blockout_layers:
        return None
    last = blockout_layers[-1]
    values = np.concatenate([last.cluster_in.probabilities().ravel(), last.cluster_out.probabilities().ravel()])
    return divergence_fraction(values)


def compare_variants(
    config: RunConfig, seeds: Sequence[int], variants: Sequence[str] = COMPARE_VARIANTS, eval_workers: int = 1
) -> List[ComparisonRecord]:
    """Train every variant on every seed with otherwise identical settings."""
    records: List[ComparisonRecord] = []
    for seed in seeds:
        for variant in variants:
            result = execute_run(config.model_copy(update={"seed": seed, "variant": variant}), eval_workers)
            record = ComparisonRecord(
                seed=seed,
                variant=variant,
                train_accuracy=result.train_accuracy,
                test_accuracy=result.test_accuracy,
                diverged_fraction=last_layer_divergence(result.network),
            )
            logger.info(
                f"Seed {seed}, {variant}: train {record.train_accuracy:.4f}, test {record.test_accuracy}, "
                f"diverged {record.diverged_fraction}"
            )
            records.append(record)
    return records


def _median_or_none(values: List[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    return median(present) if present else None


def summarize(records: Sequence[ComparisonRecord]) -> List[ComparisonRecord]:
    """Per-variant medians, in first-seen variant order."""
    summary = []
    for variant in dict.fromkeys(record.variant for record in records):
        group = [record for record in records if record.variant == variant]
        summary.append(
            ComparisonRecord(
                seed=-1,
                variant=variant,
                train_accuracy=median(record.train_accuracy for record in group),
                test_accuracy=_median_or_none([record.test_accuracy for record in group]),
                diverged_fraction=_median_or_none([record.diverged_fraction for record in group]),
            )
        )
    return summary


def write_comparison(run_dir: Path, run_id: str, records: Sequence[ComparisonRecord]) -> Path:
    """Per-seed rows followed by one median row per variant (seed column "median")."""
    rows = [
        (record.seed, record.variant, record.train_accuracy, record.test_accuracy, record.gap, record.diverged_fraction)
        for record in records
    ]
    rows += [
        ("median", record.variant, record.train_accuracy, record.test_accuracy, record.gap, record.diverged_fraction)
        for record in summarize(records)
    ]
    return write_csv(analysis_path(run_dir, run_id, ANALYSIS_COMPARE, ALL_LAYERS), COMPARE_HEADER, rows)
