"""Dataset ingestion: IDX files, the MNIST splits, and synthetic clusters.

IDX parsing is strict and byte-oriented: big-endian magic and dims,
unsigned-byte payload, transparent gzip. Pixels are scaled by exactly
1/255. The 60000-row training file is split 55000/5000 in file order.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionOverflowError,
    FormatError,
    TruncatedFileError,
    ValidationError,
)
from .ops import sigmoid
from .rng import Rng

MAGIC_IMAGES = 0x00000803
MAGIC_LABELS = 0x00000801

# caps a malicious or corrupt dims header before any allocation happens
MAX_ELEMENTS = 1 << 40

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

TRAIN_COUNT = 55000
VAL_COUNT = 5000
TEST_COUNT = 10000


@dataclass
class DataSplit:
    """Observations in [0,1] with aligned integer labels."""

    y: np.ndarray
    labels: np.ndarray
    name: str

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.y.ndim != 2:
            raise ValidationError(f"observations must be 2-D, got {self.y.ndim}-D")
        if self.labels.shape != (self.y.shape[0],):
            raise ValidationError(
                f"labels length {self.labels.shape} does not match "
                f"{self.y.shape[0]} rows"
            )
        if self.y.size and (self.y.min() < 0.0 or self.y.max() > 1.0):
            raise ValidationError("observations must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def binarized(self) -> "DataSplit":
        """Threshold at 0.5 for strictly binary Bernoulli targets."""
        return DataSplit((self.y > 0.5).astype(np.float64), self.labels, self.name)

    def head(self, limit: int) -> "DataSplit":
        """First `limit` rows in stored order; limit 0 means everything."""
        if limit <= 0 or limit >= self.n:
            return self
        return DataSplit(self.y[:limit], self.labels[:limit], self.name)


def parse_idx(path) -> np.ndarray:
    """Read one IDX tensor file (optionally gzipped) as a uint8 array.

    The 4-byte big-endian magic must be 0x00000803 (rank-3 images) or
    0x00000801 (rank-1 labels); rank u32 big-endian dims follow, then
    exactly prod(dims) payload bytes.
    """
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4:
        raise TruncatedFileError(
            f"{path}: file ends at offset {len(raw)}, magic needs 4 bytes"
        )
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (MAGIC_IMAGES, MAGIC_LABELS):
        raise BadMagicError(
            f"{path}: bad magic 0x{magic:08x} at offset 0, expected "
            f"0x{MAGIC_IMAGES:08x} or 0x{MAGIC_LABELS:08x}"
        )
    rank = magic & 0xFF
    header_len = 4 + 4 * rank
    if len(raw) < header_len:
        raise TruncatedFileError(
            f"{path}: file ends at offset {len(raw)} inside the dimension "
            f"header, expected {header_len} header bytes"
        )
    dims = struct.unpack(f">{rank}I", raw[4:header_len])
    count = 1
    for i, d in enumerate(dims):
        count *= d
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(
                f"{path}: dimensions {dims} overflow at offset {4 + 4 * i} "
                f"(more than {MAX_ELEMENTS} elements)"
            )
    expected = header_len + count
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: truncated payload, expected {expected} bytes, file "
            f"ends at offset {len(raw)}"
        )
    if len(raw) > expected:
        raise FormatError(
            f"{path}: {len(raw) - expected} trailing bytes after offset {expected}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def _find_idx(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        p = directory / name
        if p.exists():
            return p
    raise FileNotFoundError(
        f"missing {stem} (or {stem}.gz) in {directory}"
    )


def load_mnist(data_dir) -> tuple[DataSplit, DataSplit, DataSplit]:
    """Load the four canonical files into (train, val, test) splits.

    The training file's first 55000 rows become the train split and the
    remaining 5000 the validation split, in file order.
    """
    d = Path(data_dir)
    images = parse_idx(_find_idx(d, TRAIN_IMAGES))
    labels = parse_idx(_find_idx(d, TRAIN_LABELS))
    test_images = parse_idx(_find_idx(d, TEST_IMAGES))
    test_labels = parse_idx(_find_idx(d, TEST_LABELS))
    if images.shape[0] != TRAIN_COUNT + VAL_COUNT:
        raise ValidationError(
            f"expected {TRAIN_COUNT + VAL_COUNT} training images, got "
            f"{images.shape[0]}"
        )
    if test_images.shape[0] != TEST_COUNT:
        raise ValidationError(
            f"expected {TEST_COUNT} test images, got {test_images.shape[0]}"
        )
    if labels.shape[0] != images.shape[0]:
        raise ValidationError(
            f"train labels count {labels.shape[0]} does not match images "
            f"{images.shape[0]}"
        )
    if test_labels.shape[0] != test_images.shape[0]:
        raise ValidationError(
            f"test labels count {test_labels.shape[0]} does not match images "
            f"{test_images.shape[0]}"
        )
    y = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y_test = test_images.reshape(test_images.shape[0], -1).astype(np.float64) / 255.0
    train = DataSplit(y[:TRAIN_COUNT], labels[:TRAIN_COUNT], "train")
    val = DataSplit(y[TRAIN_COUNT:], labels[TRAIN_COUNT:], "val")
    test = DataSplit(y_test, test_labels, "test")
    return train, val, test


def synthetic_clusters(rng: Rng, n: int, obs_dim: int, k: int,
                       separation: float) -> DataSplit:
    """Well-separated Gaussian clusters pushed through a random map into [0,1].

    k unit-variance clusters sit on a circle sized so adjacent centers
    are `separation` apart in the 2-D latent; a fixed random linear map
    (entries scaled by 1/sqrt(2) to keep unit output variance) lifts
    them to obs_dim, and a sigmoid squashes into (0,1). Labels are
    assigned round-robin, so any prefix is close to balanced.
    """
    if k < 2:
        raise ValidationError(f"need at least 2 clusters, got {k}")
    if n < 1 or obs_dim < 1:
        raise ValidationError(f"n and obs_dim must be positive, got {n}, {obs_dim}")
    radius = separation / (2.0 * math.sin(math.pi / k))
    angles = 2.0 * math.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    lift = rng.standard_normal(2, obs_dim) / math.sqrt(2.0)
    labels = np.arange(n, dtype=np.int64) % k
    latent = centers[labels] + rng.standard_normal(n, 2)
    return DataSplit(sigmoid(latent @ lift), labels, "synthetic")


class BatchIter:
    """One epoch of index batches over a seeded shuffle.

    Batches are contiguous slices of the permutation; a trailing
    remainder smaller than 2 rows is dropped because the kernel weights
    of a single row are undefined.
    """

    def __init__(self, n: int, batch_size: int, rng: Rng):
        if n < 1:
            raise ValidationError("cannot batch an empty dataset")
        if batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
        self.permutation = rng.permutation(n)
        self.batch_size = batch_size
        self.cursor = 0

    def __iter__(self):
        self.cursor = 0
        n = self.permutation.shape[0]
        while self.cursor < n:
            end = min(self.cursor + self.batch_size, n)
            idx = self.permutation[self.cursor:end]
            self.cursor = end
            # only a trailing remainder can be undersized; drop it below 2 rows
            if idx.shape[0] < self.batch_size and idx.shape[0] < 2:
                return
            yield idx

    def __len__(self) -> int:
        n = self.permutation.shape[0]
        full, rem = divmod(n, self.batch_size)
        return full + (1 if rem >= 2 else 0)
