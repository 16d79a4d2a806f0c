"""Dataset ingestion: MNIST IDX and CIFAR-10 binary formats.

Byte layouts
------------
MNIST IDX images: big-endian uint32 magic 0x00000803, count, rows, cols,
then count*rows*cols unsigned pixel bytes. Labels: magic 0x00000801, count,
then count label bytes. Pixels are scaled to [0, 1] by /255.

CIFAR-10 binary: records of 3073 bytes -- 1 label byte (0..9) followed by
3072 pixel bytes as channel-planar 32x32 R, G, B planes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from apac.rng import STREAM_SPLIT, generator_for

MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073


class DataFormatError(ValueError):
    """Malformed dataset file."""


@dataclass
class LabeledDataset:
    images: np.ndarray          # (N, C, H, W) float32
    labels: np.ndarray          # (N,) int64
    n_classes: int
    provenance: str             # "train" | "test"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices)
        return LabeledDataset(self.images[idx], self.labels[idx],
                              self.n_classes, self.provenance)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def load_mnist_idx(image_path, label_path, provenance: str = "train") -> LabeledDataset:
    with open(image_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "IDX image header"))
        if magic != MNIST_IMAGE_MAGIC:
            raise DataFormatError(
                f"wrong magic 0x{magic:08x} in {image_path} (expected 0x{MNIST_IMAGE_MAGIC:08x})")
        raw = _read_exact(f, count * rows * cols, "IDX image payload")
        if f.read(1):
            raise DataFormatError(f"trailing bytes in {image_path}")
    with open(label_path, "rb") as f:
        magic, lcount = struct.unpack(">II", _read_exact(f, 8, "IDX label header"))
        if magic != MNIST_LABEL_MAGIC:
            raise DataFormatError(
                f"wrong magic 0x{magic:08x} in {label_path} (expected 0x{MNIST_LABEL_MAGIC:08x})")
        labels = np.frombuffer(_read_exact(f, lcount, "IDX label payload"), dtype=np.uint8)
    if count != lcount:
        raise DataFormatError(f"image count {count} != label count {lcount}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    images = images.astype(np.float32) / 255.0
    return LabeledDataset(images, labels.astype(np.int64), 10, provenance)


def write_mnist_idx(images: np.ndarray, labels: np.ndarray, image_path, label_path) -> None:
    """Encode [0,1] float images back to IDX bytes (inverse of load_mnist_idx)."""
    n, _, rows, cols = images.shape
    pix = np.round(images * 255.0).astype(np.uint8)
    with open(image_path, "wb") as f:
        f.write(struct.pack(">IIII", MNIST_IMAGE_MAGIC, n, rows, cols))
        f.write(pix.tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">II", MNIST_LABEL_MAGIC, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_cifar10_bin(paths, provenance: str = "train") -> LabeledDataset:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    all_images, all_labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
            raise DataFormatError(
                f"bad record length in {path}: {len(raw)} bytes is not a multiple of {CIFAR_RECORD_BYTES}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = rec[:, 0]
        if labels.max() > 9:
            raise DataFormatError(f"label byte > 9 in {path}")
        images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
        all_images.append(images)
        all_labels.append(labels.astype(np.int64))
    return LabeledDataset(np.concatenate(all_images), np.concatenate(all_labels), 10, provenance)


def write_cifar10_bin(images: np.ndarray, labels: np.ndarray, path) -> None:
    """Encode [0,1] float images back to CIFAR-10 binary records."""
    n = len(labels)
    pix = np.round(images * 255.0).astype(np.uint8).reshape(n, 3072)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pix], axis=1)
    Path(path).write_bytes(rec.tobytes())


def split_validation(ds: LabeledDataset, fraction: float,
                     seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Seed-deterministic disjoint partition into (train_part, val_part).

    Validation samples are held out of the training pool entirely, so
    augmented training never sees them in any deformed form.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    n = len(ds)
    n_val = int(round(n * fraction))
    if n_val == 0 or n_val == n:
        raise ValueError(f"fraction {fraction} leaves an empty partition for n={n}")
    perm = generator_for(seed, (STREAM_SPLIT,), 0).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return ds.subset(train_idx), ds.subset(val_idx)
