import struct
from pathlib import Path

import numpy as np
import pytest

from rotbnn.data import (
    CIFAR10_MEAN,
    CIFAR10_STD,
    CIFAR_RECORD,
    MNIST_MEAN,
    MNIST_STD,
    Dataset,
    DatasetFormatError,
    augment,
    batches,
    load_cifar10,
    load_idx,
    load_mnist,
    permutation,
    synthetic_classification,
    synthetic_gaussian_weights,
)

MNIST_DIR = Path("/root/data/mnist")


def write_idx_images(path, pixels: np.ndarray):
    n, h, w = pixels.shape
    path.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + pixels.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes(struct.pack(">II", 0x801, labels.size) + labels.tobytes())


@pytest.fixture
def idx_pair(tmp_path):
    pixels = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4) * 10
    write_idx_images(tmp_path / "img", pixels)
    write_idx_labels(tmp_path / "lab", [7, 2])
    return tmp_path / "img", tmp_path / "lab", pixels


class TestIdx:
    def test_round_trip(self, idx_pair):
        img, lab, pixels = idx_pair
        ds = load_idx(img, lab)
        assert ds.images.shape == (2, 1, 3, 4)
        np.testing.assert_array_equal(ds.labels, [7, 2])
        raw = np.rint(ds.denormalize()[:, 0] * 255).astype(np.uint8)
        np.testing.assert_array_equal(raw, pixels)

    def test_normalization_invertible(self, idx_pair):
        img, lab, pixels = idx_pair
        ds = load_idx(img, lab)
        assert np.max(np.abs(ds.denormalize()[:, 0] - pixels / 255.0)) < 1 / 255
        assert ds.mean == MNIST_MEAN and ds.std == MNIST_STD

    def test_truncated_payload_offset(self, tmp_path, idx_pair):
        img, lab, _ = idx_pair
        data = img.read_bytes()
        cut = tmp_path / "cut"
        cut.write_bytes(data[:-5])
        with pytest.raises(DatasetFormatError) as exc:
            load_idx(cut, lab)
        assert exc.value.offset == len(data) - 5
        assert str(len(data) - 5) in str(exc.value)

    def test_truncated_header(self, tmp_path, idx_pair):
        img, lab, _ = idx_pair
        cut = tmp_path / "cut"
        cut.write_bytes(img.read_bytes()[:9])
        with pytest.raises(DatasetFormatError) as exc:
            load_idx(cut, lab)
        assert exc.value.offset == 9

    def test_bad_magic(self, tmp_path, idx_pair):
        img, lab, _ = idx_pair
        with pytest.raises(DatasetFormatError) as exc:
            load_idx(lab, lab)
        assert exc.value.offset == 0

    def test_count_mismatch(self, tmp_path, idx_pair):
        img, _, _ = idx_pair
        write_idx_labels(tmp_path / "lab3", [1, 2, 3])
        with pytest.raises(DatasetFormatError):
            load_idx(img, tmp_path / "lab3")

    @pytest.mark.skipif(not MNIST_DIR.is_dir(), reason="MNIST files not present")
    def test_real_mnist_header(self):
        ds = load_mnist(MNIST_DIR, "train")
        assert ds.images.shape == (60000, 1, 28, 28)
        raw = (MNIST_DIR / "train-images-idx3-ubyte").read_bytes()[:16]
        assert struct.unpack(">IIII", raw) == (0x803, 60000, 28, 28)
        assert len(load_mnist(MNIST_DIR, "test")) == 10000


def _cifar_record(label, seed):
    px = np.random.default_rng(seed).integers(0, 256, size=3072, dtype=np.uint8)
    return bytes([label]) + px.tobytes(), px


class TestCifar:
    def test_two_record_fixture(self, tmp_path):
        r0, p0 = _cifar_record(3, 0)
        r1, p1 = _cifar_record(9, 1)
        (tmp_path / "test_batch.bin").write_bytes(r0 + r1)
        ds = load_cifar10(tmp_path, "test")
        assert ds.images.shape == (2, 3, 32, 32)
        np.testing.assert_array_equal(ds.labels, [3, 9])
        raw = np.rint(ds.denormalize() * 255).astype(np.uint8)
        np.testing.assert_array_equal(raw[0].ravel(), p0)
        np.testing.assert_array_equal(raw[1].ravel(), p1)
        # channel-planar: first 1024 bytes are the red plane
        np.testing.assert_array_equal(raw[0, 0].ravel(), p0[:1024])
        assert ds.mean == CIFAR10_MEAN and ds.std == CIFAR10_STD

    def test_train_concatenates_five_batches(self, tmp_path):
        for i in range(1, 6):
            (tmp_path / f"data_batch_{i}.bin").write_bytes(_cifar_record(i, i)[0])
        ds = load_cifar10(tmp_path, "train")
        np.testing.assert_array_equal(ds.labels, [1, 2, 3, 4, 5])

    def test_empty_file(self, tmp_path):
        (tmp_path / "test_batch.bin").write_bytes(b"")
        with pytest.raises(DatasetFormatError):
            load_cifar10(tmp_path, "test")

    def test_partial_record(self, tmp_path):
        rec, _ = _cifar_record(1, 0)
        (tmp_path / "test_batch.bin").write_bytes(rec + rec[:100])
        with pytest.raises(DatasetFormatError) as exc:
            load_cifar10(tmp_path, "test")
        assert exc.value.offset == CIFAR_RECORD

    def test_bad_label(self, tmp_path):
        rec, _ = _cifar_record(1, 0)
        bad = bytes([12]) + rec[1:]
        (tmp_path / "test_batch.bin").write_bytes(rec + bad)
        with pytest.raises(DatasetFormatError) as exc:
            load_cifar10(tmp_path, "test")
        assert exc.value.offset == CIFAR_RECORD


class TestSynthetic:
    def test_deterministic(self):
        np.testing.assert_array_equal(synthetic_gaussian_weights(10, 3), synthetic_gaussian_weights(10, 3))

    def test_moments(self):
        w = synthetic_gaussian_weights(100_000, 0)
        assert abs(w.mean()) < 0.02 and abs(w.std() - 1) < 0.02

    def test_single(self):
        w = synthetic_gaussian_weights(1, 0)
        assert w.shape == (1,) and np.isfinite(w[0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            synthetic_gaussian_weights(0, 0)

    def test_classification_shapes(self):
        ds = synthetic_classification(50, 8, 3, seed=1)
        assert ds.images.shape == (50, 8, 1, 1) and ds.labels.max() < 3
        te = synthetic_classification(50, 8, 3, seed=1, split="test")
        assert not np.array_equal(ds.images, te.images)


class TestDatasetType:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 1, 1, 1)), np.zeros(3, dtype=int))

    def test_label_range(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((1, 1, 1, 1)), np.array([10]))


class TestBatches:
    def _ds(self, n=10):
        return Dataset(np.arange(n, dtype=float).reshape(n, 1, 1, 1), np.zeros(n, dtype=int))

    def test_sizes(self):
        assert [len(y) for _, y in batches(self._ds(), 4, 0, 0)] == [4, 4, 2]

    def test_same_seed_epoch(self):
        a = [x.ravel().tolist() for x, _ in batches(self._ds(), 4, 1, 2)]
        b = [x.ravel().tolist() for x, _ in batches(self._ds(), 4, 1, 2)]
        assert a == b

    def test_epochs_differ(self):
        assert not np.array_equal(permutation(50, 0, 0), permutation(50, 0, 1))

    def test_covers_every_index(self):
        seen = np.concatenate([x.ravel() for x, _ in batches(self._ds(23), 5, 3, 1)])
        np.testing.assert_array_equal(np.sort(seen), np.arange(23))

    def test_unshuffled(self):
        seen = np.concatenate([x.ravel() for x, _ in batches(self._ds(7), 3, 0, 0, shuffle=False)])
        np.testing.assert_array_equal(seen, np.arange(7))

    def test_rejects_zero_batch(self):
        with pytest.raises(ValueError):
            list(batches(self._ds(), 0, 0, 0))


class TestAugment:
    def test_shape_and_determinism(self):
        x = np.random.default_rng(0).standard_normal((4, 3, 8, 8))
        a = augment(x, np.random.default_rng(1))
        b = augment(x, np.random.default_rng(1))
        assert a.shape == x.shape
        np.testing.assert_array_equal(a, b)

    def test_zero_pad_identity_when_no_shift(self):
        x = np.random.default_rng(0).standard_normal((3, 1, 5, 5))
        out = augment(x, np.random.default_rng(2), pad=0)
        for i in range(3):
            assert np.array_equal(out[i], x[i]) or np.array_equal(out[i], x[i, :, :, ::-1])
