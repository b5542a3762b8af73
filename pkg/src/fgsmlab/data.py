"""CIFAR-10 binary ingestion, subsetting and synthetic fixtures.

Binary record layout: one label byte, then 3072 pixel bytes (R, G, B planes,
each 32x32 row-major).  Pixels are scaled by 1/255 into [0, 1]; no mean/std
normalization is applied so that epsilon stays in pixel units.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .rng import stream

RECORD_BYTES = 3073
PIXEL_BYTES = 3072
IMAGE_SHAPE = (3, 32, 32)

TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)

PathLike = Union[str, os.PathLike]


class DataFormatError(ValueError):
    """Malformed dataset file; the message names the file and byte offset."""


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [N, 3, 32, 32] in [0, 1]
    labels: np.ndarray  # [N] int64 in 0..9
    name: str = "dataset"

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1:] != IMAGE_SHAPE:
            raise ValueError(f"images must be [N, 3, 32, 32], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("images and labels disagree on N")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("images must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ValueError("labels must lie in 0..9")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.images.astype(dtype), self.labels, self.name)

    def take(self, index, name=None) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], name or self.name)


def _parse(raw: bytes, source: str) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) % RECORD_BYTES:
        whole = len(raw) // RECORD_BYTES
        raise DataFormatError(
            f"{source}: truncated record at byte offset {whole * RECORD_BYTES} "
            f"(file length {len(raw)} is not a multiple of {RECORD_BYTES})")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(f"{source}: label byte {labels[bad[0]]} > 9 at byte offset "
                              f"{bad[0] * RECORD_BYTES}")
    return records[:, 1:], labels.astype(np.int64)


def load_cifar10(paths: Iterable[PathLike], dtype=np.float32, name: str = "cifar10") -> Dataset:
    """Concatenate one or more binary batch files into a Dataset."""
    pixels, labels = [], []
    for path in paths:
        px, lb = _parse(Path(path).read_bytes(), str(path))
        pixels.append(px)
        labels.append(lb)
    if not pixels:
        raise ValueError("no input files given")
    px = np.concatenate(pixels)
    images = (px.astype(np.float64) / 255.0).astype(dtype).reshape((-1,) + IMAGE_SHAPE)
    return Dataset(images, np.concatenate(labels), name)


def load_cifar10_dir(directory: PathLike, split: str = "train", dtype=np.float32) -> Dataset:
    """Load the train (5 batches) or test split from the standard directory layout."""
    files = TRAIN_FILES if split == "train" else TEST_FILES
    return load_cifar10([Path(directory) / f for f in files], dtype, f"cifar10-{split}")


def to_bytes(dataset: Dataset) -> bytes:
    """Serialize to the CIFAR-10 binary format (pixels rounded to 8 bits)."""
    n = len(dataset)
    px = np.rint(np.asarray(dataset.images, dtype=np.float64) * 255.0)
    px = np.clip(px, 0, 255).astype(np.uint8).reshape(n, PIXEL_BYTES)
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = dataset.labels.astype(np.uint8)
    records[:, 1:] = px
    return records.tobytes()


def write_cifar10(dataset: Dataset, path: PathLike) -> None:
    Path(path).write_bytes(to_bytes(dataset))


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Seeded sample of ``n`` examples without replacement, original order kept."""
    if not 0 <= n <= len(dataset):
        raise ValueError(f"cannot take {n} of {len(dataset)} examples")
    if n == len(dataset):
        return dataset
    idx = np.sort(stream(seed, "subset").choice(len(dataset), size=n, replace=False))
    return dataset.take(idx, f"{dataset.name}[{n}]")


def _block_origin(c: int) -> tuple[int, int]:
    # 4x4 grid of 8x8 cells; classes take the first cells in row-major order.
    return (c // 4) * 8, (c % 4) * 8


def synthetic_dataset(seed: int, n: int, num_classes: int = 10, dtype=np.float32) -> Dataset:
    """Class c gets a bright 8x8 block at its own position, plus U(-0.1, 0.1) noise.

    Labels cycle 0, 1, ..., num_classes - 1 so every class is represented.
    """
    if not 1 <= num_classes <= 10:
        raise ValueError("num_classes must be in 1..10")
    if n < num_classes:
        raise ValueError(f"need n >= num_classes, got n={n}")
    rng = stream(seed, "synthetic")
    labels = np.arange(n, dtype=np.int64) % num_classes
    images = np.full((n,) + IMAGE_SHAPE, 0.2)
    for c in range(num_classes):
        r, col = _block_origin(c)
        images[labels == c, :, r:r + 8, col:col + 8] = 0.8
    images += rng.uniform(-0.1, 0.1, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    # Snap to the 8-bit grid so the dataset survives a binary round trip exactly.
    images = np.rint(images * 255.0) / 255.0
    return Dataset(images.astype(dtype), labels, f"synthetic-{seed}")
