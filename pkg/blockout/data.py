"""
Datasets: synthetic hierarchical generation, the BODS binary format and mini-batching.

BODS layout (little-endian): magic "BODS", version u16, n u64, d u32,
num_classes u32, then n records of d float32 features followed by a u16 label.
Features are widened to float64 in memory.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from blockout.constants import DATASET_MAGIC, DATASET_VERSION
from blockout.exceptions import DomainError, ParseError, ShapeError
from blockout.layers import StandardizeLayer
from blockout.shared.binary_io import ByteReader, pack
from blockout.tensor_core import RngStream

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAX_RECORD_BYTES = 2**31 - 1


@dataclass(frozen=True)
class Dataset:
    """
    Immutable labelled feature matrix.

    Attributes:
        features: n x d float64 matrix, one example per row
        labels: Length-n integer labels in [0, num_classes)
        num_classes: Number of classes
        superclass_of: Superclass of every class, for generated hierarchies
        class_centers: num_classes x d generating means, for generated data
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    superclass_of: Optional[Tuple[int, ...]] = None
    class_centers: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ShapeError("dataset", self.features.shape, self.labels.shape)
        if self.num_classes < 1:
            raise DomainError("dataset: num_classes must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(f"dataset: labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("dataset: features must be finite")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[indices].copy(),
            labels=self.labels[indices].copy(),
            num_classes=self.num_classes,
            superclass_of=self.superclass_of,
            class_centers=self.class_centers,
        )


def generate_hierarchical(
    seed: int,
    superclasses: int,
    subclasses_per: int,
    dim: int,
    per_class: int,
    intra_spread: float,
    inter_spread: float,
) -> Dataset:
    """
    Gaussian data whose classes group into superclasses.

    Superclass centers are N(0, inter_spread²) per coordinate; each subclass center
    is its superclass center plus N(0, intra_spread²) noise; samples are unit-variance
    Gaussians around their subclass center. Class c = superclass * subclasses_per + sub.

    Returns:
        Dataset with per_class examples of every class, ordered by class
    """
    if min(superclasses, subclasses_per, dim, per_class) < 1:
        raise DomainError("generate_hierarchical: counts and dim must be positive")
    if intra_spread < 0.0 or inter_spread <= 0.0:
        raise DomainError("generate_hierarchical: spreads must be positive")
    if inter_spread <= intra_spread:
        logger.warning(f"inter_spread {inter_spread} <= intra_spread {intra_spread}; superclasses will overlap")

    rng = RngStream(seed).child("hierarchical")
    super_centers = rng.normal((superclasses, dim), std=inter_spread)
    offsets = rng.normal((superclasses, subclasses_per, dim), std=intra_spread)
    centers = (super_centers[:, None, :] + offsets).reshape(superclasses * subclasses_per, dim)

    num_classes = superclasses * subclasses_per
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    features = centers[labels] + rng.normal((num_classes * per_class, dim))
    superclass_of = tuple(int(c // subclasses_per) for c in range(num_classes))
    logger.info(
        f"Generated hierarchical dataset: {superclasses}x{subclasses_per} classes, dim {dim}, "
        f"{per_class} per class (inter {inter_spread}, intra {intra_spread})"
    )
    return Dataset(features, labels, num_classes, superclass_of, centers)


def stratified_split(dataset: Dataset, test_per_class: int, rng: RngStream) -> Tuple[Dataset, Dataset]:
    """Move test_per_class randomly chosen examples of every class into a test set."""
    train_idx, test_idx = [], []
    for label in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == label)
        if len(members) <= test_per_class:
            raise DomainError(f"stratified_split: class {label} has {len(members)} examples, needs > {test_per_class}")
        members = members[rng.permutation(len(members))]
        test_idx.append(np.sort(members[:test_per_class]))
        train_idx.append(np.sort(members[test_per_class:]))
    return dataset.subset(np.concatenate(train_idx)), dataset.subset(np.concatenate(test_idx))


def fit_standardizer(dataset: Dataset) -> StandardizeLayer:
    """Per-dimension mean and standard deviation of a training split; constant dimensions get scale 1."""
    mean = dataset.features.mean(axis=0)
    std = dataset.features.std(axis=0)
    scale = np.where(std > 0.0, std, 1.0)
    logger.info(
        f"Fitted standardization on {dataset.size} examples: "
        f"mean range [{mean.min():.4f}, {mean.max():.4f}], std range [{scale.min():.4f}, {scale.max():.4f}]"
    )
    return StandardizeLayer(mean, scale)


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("features", "<f4", (dim,)), ("label", "<u2")])


def encode_dataset(dataset: Dataset) -> bytes:
    if dataset.num_classes > 2**16:
        raise DomainError("BODS labels are u16; too many classes")
    records = np.empty(dataset.size, dtype=_record_dtype(dataset.dim))
    records["features"] = dataset.features.astype("<f4")
    records["label"] = dataset.labels
    header = DATASET_MAGIC + pack("HQII", DATASET_VERSION, dataset.size, dataset.dim, dataset.num_classes)
    return header + records.tobytes()


def decode_dataset(data: bytes) -> Dataset:
    """
    Parse BODS bytes.

    Raises:
        ParseError: On bad magic, unknown version, truncation, trailing bytes,
            non-finite features or a label >= num_classes (with its record index)
    """
    reader = ByteReader(data)
    reader.expect(DATASET_MAGIC)
    version = reader.unpack("H", "version")
    if version != DATASET_VERSION:
        raise ParseError(f"unsupported dataset version {version}", reader.offset - 2)
    n = reader.unpack("Q", "record count")
    dim = reader.unpack("I", "dimension")
    num_classes = reader.unpack("I", "class count")
    if dim == 0 or num_classes == 0:
        raise ParseError("dimension and class count must be positive", reader.offset - 8)
    header_end = reader.offset
    record_size = 4 * dim + 2
    # numpy record sizes must fit a C int
    if record_size > MAX_RECORD_BYTES or (n > 0 and record_size > reader.remaining()):
        raise ParseError(
            f"dimension {dim} gives {record_size}-byte records; {reader.remaining()} bytes left",
            header_end - 8,
        )
    dtype = _record_dtype(dim)
    if n > reader.remaining() // dtype.itemsize:
        raise ParseError(f"truncated: header declares {n} records of {dtype.itemsize} bytes", len(data))
    records = reader.records(dtype, n, "records")
    reader.expect_end()

    labels = records["label"].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        index = int(bad[0])
        raise ParseError(
            f"label {labels[index]} >= num_classes {num_classes}",
            header_end + index * dtype.itemsize + 4 * dim,
            record_index=index,
        )
    features = records["features"].astype(np.float64)
    finite = np.isfinite(features).all(axis=1)
    if not finite.all():
        index = int(np.flatnonzero(~finite)[0])
        raise ParseError("non-finite feature value", header_end + index * dtype.itemsize, record_index=index)
    return Dataset(features.reshape(n, dim), labels, int(num_classes))


def load_binary(path: PathLike) -> Dataset:
    dataset = decode_dataset(Path(path).read_bytes())
    logger.info(f"Loaded {dataset.size} examples (dim {dataset.dim}, {dataset.num_classes} classes) from {path}")
    return dataset


def write_binary(dataset: Dataset, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_dataset(dataset))
    logger.info(f"Wrote {dataset.size} examples to {path}")


class BatchIterator:
    """
    Serves mini-batches; every epoch is a fresh permutation of the dataset.

    The last batch of an epoch holds the remainder and may be shorter than batch_size.
    """

    def __init__(self, dataset: Dataset, batch_size: int, rng: RngStream):
        if dataset.size == 0:
            raise DomainError("BatchIterator: dataset is empty")
        if batch_size < 1:
            raise DomainError("BatchIterator: batch_size must be positive")
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = rng
        self.epoch = 0
        self._order = rng.permutation(dataset.size)
        self._position = 0

    def next_batch(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (features d x B, labels length B)."""
        if self._position >= self.dataset.size:
            self.epoch += 1
            self._order = self.rng.permutation(self.dataset.size)
            self._position = 0
        indices = self._order[self._position : self._position + self.batch_size]
        self._position += len(indices)
        return np.ascontiguousarray(self.dataset.features[indices].T), self.dataset.labels[indices].copy()
