"""IDX parsing against checked-in fixtures, split rules, synthetic data, batching."""

import gzip
import struct

import numpy as np
import pytest

from npvae.data import (
    BatchIter,
    DataSplit,
    MAX_ELEMENTS,
    load_mnist,
    parse_idx,
    synthetic_clusters,
)
from npvae.errors import (
    BadMagicError,
    DimensionOverflowError,
    FormatError,
    TruncatedFileError,
    ValidationError,
)
from npvae.rng import Rng
from tests.conftest import FIXTURES, fixture_label, fixture_pixel


class TestParseIdxFixtures:
    def test_image_fixture_bytes(self, fixture_dir):
        arr = parse_idx(fixture_dir / "fixture-images-idx3-ubyte")
        assert arr.shape == (16, 28, 28)
        assert arr.dtype == np.uint8
        for i in (0, 3, 15):
            for r in (0, 13, 27):
                for c in (0, 9, 27):
                    assert arr[i, r, c] == fixture_pixel(i, r, c)

    def test_image_fixture_full_formula(self, fixture_dir):
        arr = parse_idx(fixture_dir / "fixture-images-idx3-ubyte")
        i, r, c = np.meshgrid(
            np.arange(16), np.arange(28), np.arange(28), indexing="ij"
        )
        expected = ((77 * i + 13 * r + c) % 256).astype(np.uint8)
        assert np.array_equal(arr, expected)

    def test_label_fixture_bytes(self, fixture_dir):
        arr = parse_idx(fixture_dir / "fixture-labels-idx1-ubyte")
        assert arr.shape == (16,)
        assert arr.tolist() == [fixture_label(i) for i in range(16)]

    def test_gzip_variants_identical(self, fixture_dir):
        for stem in ("fixture-images-idx3-ubyte", "fixture-labels-idx1-ubyte"):
            plain = parse_idx(fixture_dir / stem)
            zipped = parse_idx(fixture_dir / (stem + ".gz"))
            assert np.array_equal(plain, zipped)


class TestParseIdxErrors:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(struct.pack(">II", 0x00000802, 3) + b"abc")
        with pytest.raises(BadMagicError, match="0x00000802"):
            parse_idx(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty"
        p.write_bytes(b"")
        with pytest.raises(TruncatedFileError):
            parse_idx(p)

    def test_truncated_header_names_offset(self, tmp_path):
        p = tmp_path / "short-header"
        p.write_bytes(struct.pack(">I", 0x00000803) + struct.pack(">I", 5))
        with pytest.raises(TruncatedFileError, match="offset 8"):
            parse_idx(p)

    def test_truncated_payload_names_offsets(self, tmp_path):
        p = tmp_path / "short-payload"
        p.write_bytes(struct.pack(">II", 0x00000801, 10) + b"\x00" * 4)
        with pytest.raises(TruncatedFileError, match="expected 18 bytes.*offset 12"):
            parse_idx(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "trailing"
        p.write_bytes(struct.pack(">II", 0x00000801, 2) + b"\x01\x02\x03")
        with pytest.raises(FormatError, match="1 trailing bytes after offset 10"):
            parse_idx(p)

    def test_dimension_overflow_capped_before_alloc(self, tmp_path):
        p = tmp_path / "huge"
        dims = (0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF)
        p.write_bytes(struct.pack(">IIII", 0x00000803, *dims))
        with pytest.raises(DimensionOverflowError, match="offset"):
            parse_idx(p)
        assert MAX_ELEMENTS == 1 << 40

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_idx(tmp_path / "nope")

    def test_gzip_truncated_inside(self, tmp_path):
        p = tmp_path / "trunc.gz"
        payload = struct.pack(">II", 0x00000801, 4) + b"\x00" * 2
        p.write_bytes(gzip.compress(payload))
        with pytest.raises(TruncatedFileError):
            parse_idx(p)


class TestLoadMnist:
    def test_split_counts_and_order(self, mnist_dir):
        train, val, test = load_mnist(mnist_dir)
        assert (train.n, val.n, test.n) == (55000, 5000, 10000)
        assert train.y.shape == (55000, 784)
        assert (train.name, val.name, test.name) == ("train", "val", "test")

    def test_exact_255_scaling(self, mnist_dir):
        from npvae.data import TRAIN_IMAGES, _find_idx

        raw = parse_idx(_find_idx(mnist_dir, TRAIN_IMAGES))
        train, val, _ = load_mnist(mnist_dir)
        flat = raw.reshape(raw.shape[0], -1).astype(np.float64) / 255.0
        assert np.array_equal(train.y, flat[:55000])
        assert np.array_equal(val.y, flat[55000:])
        assert train.y.max() <= 1.0 and train.y.min() >= 0.0

    def test_val_is_file_order_tail(self, mnist_dir):
        from npvae.data import TRAIN_LABELS, _find_idx

        labels = parse_idx(_find_idx(mnist_dir, TRAIN_LABELS))
        train, val, _ = load_mnist(mnist_dir)
        assert np.array_equal(train.labels, labels[:55000].astype(np.int64))
        assert np.array_equal(val.labels, labels[55000:].astype(np.int64))

    def test_reload_identical(self, mnist_dir):
        a = load_mnist(mnist_dir)
        b = load_mnist(mnist_dir)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.y, sb.y)
            assert np.array_equal(sa.labels, sb.labels)

    def test_wrong_train_count_rejected(self, tmp_path):
        from tests.conftest import write_idx_images, write_idx_labels

        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(100, 28, 28), dtype=np.uint8)
        write_idx_images(tmp_path / "train-images-idx3-ubyte", imgs)
        write_idx_labels(
            tmp_path / "train-labels-idx1-ubyte",
            np.zeros(100, dtype=np.uint8),
        )
        write_idx_images(tmp_path / "t10k-images-idx3-ubyte", imgs[:10])
        write_idx_labels(
            tmp_path / "t10k-labels-idx1-ubyte", np.zeros(10, dtype=np.uint8)
        )
        with pytest.raises(ValidationError, match="60000"):
            load_mnist(tmp_path)

    def test_missing_file_named(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="train-images-idx3-ubyte"):
            load_mnist(tmp_path)


class TestDataSplit:
    def test_range_validation(self):
        with pytest.raises(ValidationError):
            DataSplit(np.array([[1.5]]), np.array([0]), "bad")
        with pytest.raises(ValidationError):
            DataSplit(np.array([[-0.1]]), np.array([0]), "bad")

    def test_label_alignment(self):
        with pytest.raises(ValidationError):
            DataSplit(np.zeros((3, 2)), np.zeros(2, dtype=np.int64), "bad")

    def test_binarized_thresholds_at_half(self):
        s = DataSplit(np.array([[0.0, 0.4999, 0.5, 0.5001, 1.0]]), np.array([0]), "s")
        assert s.binarized().y.tolist() == [[0.0, 0.0, 0.0, 1.0, 1.0]]

    def test_head_prefix_and_zero(self):
        s = DataSplit(Rng(0).uniform(10, 3), np.arange(10), "s")
        h = s.head(4)
        assert h.n == 4
        assert np.array_equal(h.y, s.y[:4])
        assert s.head(0) is s
        assert s.head(99) is s


class TestSyntheticClusters:
    def test_shape_range_determinism(self):
        a = synthetic_clusters(Rng(5), 40, 16, 2, 6.0)
        b = synthetic_clusters(Rng(5), 40, 16, 2, 6.0)
        assert a.y.shape == (40, 16)
        assert (a.y > 0).all() and (a.y < 1).all()
        assert np.array_equal(a.y, b.y)

    def test_round_robin_labels(self):
        s = synthetic_clusters(Rng(6), 7, 4, 3, 5.0)
        assert s.labels.tolist() == [0, 1, 2, 0, 1, 2, 0]

    def test_clusters_actually_separate(self):
        # class means far apart relative to intra-class spread in obs space
        s = synthetic_clusters(Rng(7), 400, 16, 2, 6.0)
        m0 = s.y[s.labels == 0].mean(axis=0)
        m1 = s.y[s.labels == 1].mean(axis=0)
        gap = np.linalg.norm(m0 - m1)
        spread = np.linalg.norm(s.y[s.labels == 0] - m0, axis=1).mean()
        assert gap > spread

    def test_rejects_degenerate_args(self):
        with pytest.raises(ValidationError):
            synthetic_clusters(Rng(0), 10, 4, 1, 5.0)
        with pytest.raises(ValidationError):
            synthetic_clusters(Rng(0), 0, 4, 2, 5.0)


class TestBatchIter:
    def test_even_split(self):
        it = BatchIter(10, 3, Rng(1))
        sizes = [len(b) for b in it]
        assert sizes == [3, 3, 3]
        assert len(it) == 3

    def test_batches_partition_permutation_prefix(self):
        it = BatchIter(11, 4, Rng(2))
        flat = np.concatenate(list(it))
        assert np.array_equal(flat, it.permutation[: len(flat)])
        assert sorted(flat.tolist()) == sorted(set(flat.tolist()))

    def test_trailing_pair_kept(self):
        sizes = [len(b) for b in BatchIter(10, 4, Rng(3))]
        assert sizes == [4, 4, 2]
        assert len(BatchIter(10, 4, Rng(3))) == 3

    def test_trailing_singleton_dropped(self):
        sizes = [len(b) for b in BatchIter(9, 4, Rng(4))]
        assert sizes == [4, 4]
        assert len(BatchIter(9, 4, Rng(4))) == 2

    def test_batch_size_one_full_batches_survive(self):
        sizes = [len(b) for b in BatchIter(3, 1, Rng(5))]
        assert sizes == [1, 1, 1]

    def test_same_seed_same_order(self):
        a = [b.tolist() for b in BatchIter(20, 6, Rng(6))]
        b = [b.tolist() for b in BatchIter(20, 6, Rng(6))]
        assert a == b

    def test_reiteration_restarts(self):
        it = BatchIter(6, 2, Rng(7))
        first = [b.tolist() for b in it]
        second = [b.tolist() for b in it]
        assert first == second

    def test_rejects_empty_and_bad_batch(self):
        with pytest.raises(ValidationError):
            BatchIter(0, 2, Rng(0))
        with pytest.raises(ValidationError):
            BatchIter(5, 0, Rng(0))


def test_fixture_files_are_checked_in():
    for name in (
        "fixture-images-idx3-ubyte",
        "fixture-images-idx3-ubyte.gz",
        "fixture-labels-idx1-ubyte",
        "fixture-labels-idx1-ubyte.gz",
    ):
        assert (FIXTURES / name).exists(), name
