"""Dataset ingestion: MNIST (IDX), CIFAR-10 (binary batches), synthetic data."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .seeds import SHUFFLE, purpose_rng

MNIST_MEAN = (0.1307,)
MNIST_STD = (0.3081,)
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


class DatasetFormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None, path=None):
        where = f" at byte offset {offset}" if offset is not None else ""
        src = f"{path}: " if path is not None else ""
        super().__init__(f"{src}{message}{where}")
        self.offset = offset
        self.path = path


@dataclass
class Dataset:
    images: np.ndarray  # N x C x H x W, normalized
    labels: np.ndarray  # N, int64
    split: str = "train"
    classes: int = 10
    mean: tuple = (0.0,)
    std: tuple = (1.0,)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels outside [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def denormalize(self) -> np.ndarray:
        """Images mapped back to [0, 1] pixel scale."""
        m = np.asarray(self.mean).reshape(1, -1, 1, 1)
        s = np.asarray(self.std).reshape(1, -1, 1, 1)
        return self.images * s + m

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.split, self.classes, self.mean, self.std)


def normalize(images01: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    m = np.asarray(mean, dtype=np.float64).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=np.float64).reshape(1, -1, 1, 1)
    return (images01 - m) / s


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise DatasetFormatError("file too short for IDX magic", len(raw), path)
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DatasetFormatError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0, path)
    if len(raw) < header:
        raise DatasetFormatError("truncated IDX header", len(raw), path)
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise DatasetFormatError(f"truncated IDX payload: expected {need} bytes, got {len(raw)}", len(raw), path)
    return np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train",
             mean=MNIST_MEAN, std=MNIST_STD) -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DatasetFormatError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(normalize(x, mean, std), labels.astype(np.int64), split, 10, tuple(mean), tuple(std))


def load_mnist(root, split: str = "train", **kw) -> Dataset:
    prefix = "train" if split == "train" else "t10k"
    root = Path(root)
    return load_idx(root / f"{prefix}-images-idx3-ubyte", root / f"{prefix}-labels-idx1-ubyte", split, **kw)


def _read_cifar_file(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw or len(raw) % CIFAR_RECORD:
        raise DatasetFormatError(
            f"size {len(raw)} is not a positive multiple of the {CIFAR_RECORD}-byte record",
            len(raw) - len(raw) % CIFAR_RECORD, path)
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DatasetFormatError(f"label {labels[bad]} out of range", bad * CIFAR_RECORD, path)
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def load_cifar10(path_dir, split: str = "test", mean=CIFAR10_MEAN, std=CIFAR10_STD) -> Dataset:
    """Read the CIFAR-10 binary batches (``data_batch_1..5.bin`` or ``test_batch.bin``)."""
    d = Path(path_dir)
    files = CIFAR_TRAIN_FILES if split == "train" else (CIFAR_TEST_FILE,)
    parts = [_read_cifar_file(d / f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    x = images.astype(np.float64) / 255.0
    return Dataset(normalize(x, mean, std), labels, split, 10, tuple(mean), tuple(std))


def synthetic_gaussian_weights(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.random.default_rng(seed).standard_normal(n)


def synthetic_classification(n: int, features: int = 16, classes: int = 4, seed: int = 0,
                             separation: float = 6.0, split: str = "train") -> Dataset:
    """Gaussian blobs around well-separated random centres, shaped N x features x 1 x 1."""
    rng = np.random.default_rng([seed, 99])
    centres = rng.standard_normal((classes, features))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    sample_rng = np.random.default_rng([seed, 100, 0 if split == "train" else 1])
    labels = sample_rng.integers(0, classes, size=n)
    x = centres[labels] + sample_rng.standard_normal((n, features))
    return Dataset(x[:, :, None, None], labels.astype(np.int64), split, classes)


def permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return purpose_rng(seed, SHUFFLE, epoch).permutation(n)


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int,
            shuffle: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Mini-batches in an order fixed by ``(seed, epoch)``; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = permutation(len(ds), seed, epoch) if shuffle else np.arange(len(ds))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield ds.images[idx], ds.labels[idx]


def augment(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop after zero padding plus random horizontal flip."""
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out
