"""
Diagnostics of learned cluster probabilities, written as CSV for external plotting.

Every CSV has a one-line header. Files are named <run-id>.<analysis>.<layer>.csv,
where layer is a cluster interface name such as layer3.out, or "all".
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from blockout.constants import (
    ALL_LAYERS,
    ANALYSIS_CLUSTERS,
    ANALYSIS_CURVE,
    ANALYSIS_HIST,
    ANALYSIS_PCA,
    DIVERGENCE_BAND,
)
from blockout.exceptions import DomainError, LogicError, ShapeError
from blockout.schemas import TrainingLog
from blockout.shared.utils import write_csv

logger = logging.getLogger(__name__)

PCA_TOLERANCE = 1e-10
PCA_MAX_ITERATIONS = 10_000

HIST_HEADER = ("iteration", "bin", "lower", "upper", "count", "median")
PCA_HEADER = ("node", "pc1", "pc2", "dominant_cluster")
CLUSTERS_HEADER = ("category", "expected_clusters")
CURVE_HEADER = ("iteration", "train_loss", "train_accuracy", "eval_accuracy")


@dataclass
class ProbabilitySnapshotSeries:
    """Ordered (iteration, layer, P) triples; each layer keeps one shape throughout."""

    entries: List[Tuple[int, str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        shapes: Dict[str, Tuple[int, ...]] = {}
        for _, layer, p in self.entries:
            if shapes.setdefault(layer, p.shape) != p.shape:
                raise ShapeError(f"snapshot series {layer}", shapes[layer], p.shape)

    @classmethod
    def from_log(cls, log: TrainingLog, layer: Optional[str] = None) -> "ProbabilitySnapshotSeries":
        return cls([(s.iteration, s.layer, s.matrix()) for s in log.snapshots if layer is None or s.layer == layer])

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class HistogramRow:
    iteration: int
    layer: str
    counts: np.ndarray
    edges: np.ndarray
    median: float


def probability_histogram(series: ProbabilitySnapshotSeries, bins: int = 20) -> List[HistogramRow]:
    """
    Histogram of the P entries of every snapshot over [0, 1], with their median.

    Raises:
        DomainError: If bins < 2 or the series is empty
    """
    if bins < 2:
        raise DomainError(f"probability_histogram: bins must be >= 2, got {bins}")
    if not len(series):
        raise DomainError("probability_histogram: snapshot series is empty")
    rows = []
    for iteration, layer, p in series.entries:
        counts, edges = np.histogram(p, bins=bins, range=(0.0, 1.0))
        rows.append(HistogramRow(iteration, layer, counts, edges, float(np.median(p))))
    return rows


def _first_loading_positive(vector: np.ndarray) -> np.ndarray:
    significant = np.flatnonzero(np.abs(vector) > 1e-12 * max(np.abs(vector).max(), 1e-300))
    if significant.size and vector[significant[0]] < 0.0:
        return -vector
    return vector


def _top_eigenvectors(matrix: np.ndarray, count: int) -> np.ndarray:
    """Leading eigenvectors of a symmetric PSD matrix by power iteration with deflation."""
    size = matrix.shape[0]
    floor = 1e-14 * max(float(np.trace(matrix)), 1e-300)
    found: List[np.ndarray] = []
    work = matrix.copy()
    for component in range(count):
        vector = np.linspace(1.0, 2.0, size)
        for basis in [None, *range(size)]:
            if basis is not None:
                vector = np.eye(size)[basis]
            for previous in found:
                vector = vector - (previous @ vector) * previous
            if np.linalg.norm(vector) > 1e-8:
                break
        vector = vector / np.linalg.norm(vector)

        eigenvalue = 0.0
        for _ in range(PCA_MAX_ITERATIONS):
            image = work @ vector
            for previous in found:
                image = image - (previous @ image) * previous
            norm = np.linalg.norm(image)
            if norm <= floor:
                eigenvalue = 0.0
                break
            image = image / norm
            eigenvalue = float(image @ matrix @ image)
            converged = np.linalg.norm(image - vector) < PCA_TOLERANCE
            vector = image
            if converged:
                break
        else:
            logger.warning(f"Power iteration for component {component} did not converge in {PCA_MAX_ITERATIONS} steps")

        vector = _first_loading_positive(vector)
        found.append(vector)
        work = work - eigenvalue * np.outer(vector, vector)
    return np.column_stack(found)


def pca_project(p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project the rows of a d x k probability matrix onto their top two principal axes.

    Returns:
        (d x 2 projections of the centered rows, dominant cluster per row with ties
        going to the lowest index)

    Raises:
        DomainError: If k < 2
    """
    if p.ndim != 2:
        raise ShapeError("pca_project", p.shape)
    if p.shape[1] < 2:
        raise DomainError(f"pca_project: needs k >= 2 clusters, got {p.shape[1]}")
    centered = p - p.mean(axis=0, keepdims=True)
    covariance = centered.T @ centered / max(p.shape[0] - 1, 1)
    axes = _top_eigenvectors(covariance, 2)
    return centered @ axes, np.argmax(p, axis=1)


@dataclass
class ClusterExpectation:
    per_category: np.ndarray
    p25: float
    p50: float
    p75: float


def expected_clusters_per_category(p_output: np.ndarray) -> ClusterExpectation:
    """Row sums of the output layer's P (expected clusters per category) and their quartiles."""
    if p_output.ndim != 2:
        raise ShapeError("expected_clusters_per_category", p_output.shape)
    per_category = p_output.sum(axis=1)
    p25, p50, p75 = np.percentile(per_category, [25.0, 50.0, 75.0])
    return ClusterExpectation(per_category, float(p25), float(p50), float(p75))


def divergence_fraction(p: np.ndarray, band: Tuple[float, float] = DIVERGENCE_BAND) -> float:
    """Fraction of probabilities strictly outside the band [low, high]."""
    low, high = band
    return float(np.mean((p < low) | (p > high)))


def convergence_table(log: TrainingLog) -> List[Tuple]:
    """
    Rows of (iteration, train loss, train accuracy, eval accuracy).

    Eval accuracy is the test accuracy of the evaluation at that iteration, or its
    full training-set accuracy when the run had no test split; None between evaluations.
    """
    evaluated = {
        record.iteration: record.test_accuracy if record.test_accuracy is not None else record.train_accuracy
        for record in log.evaluations
    }
    return [(r.iteration, r.loss, r.train_accuracy, evaluated.get(r.iteration)) for r in log.records]


def analysis_path(run_dir: Union[str, Path], run_id: str, analysis: str, layer: str) -> Path:
    return Path(run_dir) / f"{run_id}.{analysis}.{layer}.csv"


def write_analysis(
    run_dir: Union[str, Path],
    run_id: str,
    log: TrainingLog,
    which: str,
    bins: int = 20,
    output_layer: Optional[str] = None,
) -> List[Path]:
    """
    Write the CSV family for one analysis of a finished run.

    Args:
        run_dir: Directory receiving the CSVs
        run_id: Run identifier used in file names
        log: The run's training log
        which: One of hist, pca, clusters, curve
        bins: Histogram bin count
        output_layer: Cluster interface of the output categories (clusters analysis)

    Returns:
        Paths written
    """
    if which == ANALYSIS_CURVE:
        return [write_csv(analysis_path(run_dir, run_id, which, ALL_LAYERS), CURVE_HEADER, convergence_table(log))]

    grouped = log.snapshots_by_layer()
    if not grouped:
        raise LogicError("training log holds no probability snapshots")
    written: List[Path] = []

    if which == ANALYSIS_HIST:
        for layer in grouped:
            series = ProbabilitySnapshotSeries.from_log(log, layer)
            rows = []
            for row in probability_histogram(series, bins):
                for index, count in enumerate(row.counts):
                    rows.append((row.iteration, index, row.edges[index], row.edges[index + 1], int(count), row.median))
            written.append(write_csv(analysis_path(run_dir, run_id, which, layer), HIST_HEADER, rows))

    elif which == ANALYSIS_PCA:
        for layer, snapshots in grouped.items():
            final = snapshots[-1].matrix()
            if final.shape[1] < 2:
                logger.warning(f"Skipping PCA of {layer}: k = {final.shape[1]}")
                continue
            projections, dominant = pca_project(final)
            rows = [(node, projections[node, 0], projections[node, 1], int(dominant[node])) for node in range(final.shape[0])]
            written.append(write_csv(analysis_path(run_dir, run_id, which, layer), PCA_HEADER, rows))

    elif which == ANALYSIS_CLUSTERS:
        layer = output_layer or list(grouped)[-1]
        if layer not in grouped:
            raise LogicError(f"no snapshots for output layer {layer}")
        expectation = expected_clusters_per_category(grouped[layer][-1].matrix())
        rows = [(category, value) for category, value in enumerate(expectation.per_category)]
        rows += [("p25", expectation.p25), ("p50", expectation.p50), ("p75", expectation.p75)]
        written.append(write_csv(analysis_path(run_dir, run_id, which, layer), CLUSTERS_HEADER, rows))

    else:
        raise DomainError(f"unknown analysis {which!r}")

    logger.info(f"Wrote {len(written)} {which} CSV file(s) to {run_dir}")
    return written
