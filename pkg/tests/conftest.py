"""Shared fixtures.

The full MNIST corpus is not redistributable inside this repository, so
integration tests run against a generated stand-in with the exact same
container layout: 60000/10000 images in the four canonical IDX files,
28x28 unsigned bytes, ten round-robin classes with smooth cluster
structure so training behaves sensibly. Byte-exact parser tests use the
small checked-in fixture files instead.
"""

import struct
from pathlib import Path

import numpy as np
import pytest

from npvae.ops import sigmoid
from npvae.rng import Rng

FIXTURES = Path(__file__).parent / "fixtures"

CORPUS_SEED = 424242
CORPUS_CLASSES = 10


def write_idx_images(path, images: np.ndarray) -> None:
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">IIII", 0x803, n, h, w) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    Path(path).write_bytes(struct.pack(">II", 0x801, labels.shape[0]) + labels.tobytes())


def make_corpus(out_dir: Path, n_train: int = 60000, n_test: int = 10000) -> None:
    rng = Rng(CORPUS_SEED)
    k = CORPUS_CLASSES
    radius = 6.0 / (2.0 * np.sin(np.pi / k))
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    lift = rng.standard_normal(2, 784) / np.sqrt(2.0)

    def block(n):
        labels = (np.arange(n) % k).astype(np.int64)
        latent = centers[labels] + rng.standard_normal(n, 2)
        pix = np.rint(sigmoid(latent @ lift) * 255.0).astype(np.uint8)
        return pix.reshape(n, 28, 28), labels.astype(np.uint8)

    train_img, train_lab = block(n_train)
    test_img, test_lab = block(n_test)
    write_idx_images(out_dir / "train-images-idx3-ubyte", train_img)
    write_idx_labels(out_dir / "train-labels-idx1-ubyte", train_lab)
    write_idx_images(out_dir / "t10k-images-idx3-ubyte", test_img)
    write_idx_labels(out_dir / "t10k-labels-idx1-ubyte", test_lab)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("mnist_corpus")
    make_corpus(d)
    return d


@pytest.fixture()
def fixture_dir() -> Path:
    return FIXTURES


def fixture_pixel(i: int, r: int, c: int) -> int:
    """The formula the checked-in fixture images were generated from."""
    return (77 * i + 13 * r + c) % 256


def fixture_label(i: int) -> int:
    return (3 * i + 1) % 10
