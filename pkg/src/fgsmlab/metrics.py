"""Evaluation metrics and the epoch-wise double-descent detector."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .attacks import AttackSpec, attack
from .nn import predict
from .regularizers import alignment_cosines
from .rng import as_generator


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    clean_acc: float
    robust_acc: float
    local_linearity: float
    orth_gap: float
    wall_seconds: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise FloatingPointError(f"metric {f.name} is not finite ({v}) at epoch {self.epoch}")
        for name in ("clean_acc", "robust_acc"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        if not -1.0 <= self.local_linearity <= 1.0:
            raise ValueError("local_linearity outside [-1, 1]")
        if self.orth_gap < 0:
            raise ValueError("orth_gap must be non-negative")

    @staticmethod
    def header() -> list[str]:
        return [f.name for f in fields(MetricsRecord)]

    def row(self) -> list[str]:
        return [str(v) for v in astuple(self)]


@dataclass(frozen=True)
class DoubleDescentEpisode:
    peak_epoch: int
    trough_epoch: int
    recovery_epoch: int
    drop: float
    recovered_fraction: float


def accuracy(params, dataset, batch_size: int = 500) -> float:
    """Fraction of examples whose argmax logit equals the label."""
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    pred = predict(params, dataset.images, batch_size)
    return float(np.mean(pred == dataset.labels))


def robust_accuracy(params, dataset, attack_spec: AttackSpec, seed=0,
                    batch_size: int = 250) -> float:
    """Accuracy on inputs attacked white-box against ``params``."""
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    if attack_spec.epsilon == 0:
        return accuracy(params, dataset)
    adv = attacked_images(params, dataset, attack_spec, seed, batch_size)
    pred = predict(params, adv)
    return float(np.mean(pred == dataset.labels))


def attacked_images(params, dataset, attack_spec: AttackSpec, seed=0,
                    batch_size: int = 250) -> np.ndarray:
    rng = as_generator(seed, "pgd-init")
    images = dataset.images.astype(params.dtype, copy=False)
    parts = []
    for i in range(0, len(dataset), batch_size):
        sl = slice(i, i + batch_size)
        parts.append(attack(params, images[sl], dataset.labels[sl], attack_spec, rng))
    return np.concatenate(parts)


def local_linearity(params, images: np.ndarray, labels, epsilon: float, samples: int = 10,
                    tau: float = 1e-12, seed=0, batch_size: int = 256) -> float:
    """Mean cosine between input gradients at x and at a uniformly perturbed x."""
    if len(labels) == 0:
        raise ValueError("local linearity of an empty sample is undefined")
    rng = as_generator(seed, "ll-eta")
    images = np.asarray(images, dtype=params.dtype)
    labels = np.asarray(labels)
    total = 0.0
    for i in range(0, len(labels), batch_size):
        sl = slice(i, i + batch_size)
        for c in alignment_cosines(params, images[sl], labels[sl], epsilon, samples, tau, rng):
            total += float(np.sum(c.data, dtype=np.float64))
    return total / (len(labels) * samples)


def detect_double_descent(series: Sequence[float], drop_threshold: float = 0.05,
                          recovery_fraction: float = 0.8,
                          epochs: Optional[Sequence[int]] = None) -> list[DoubleDescentEpisode]:
    """Find fall-then-recover episodes in a per-epoch series.

    A left-to-right scan keeps the running maximum.  An episode opens once the
    value sits ``drop_threshold`` or more below it; the trough is the minimum
    reached afterwards, and the episode closes at the first epoch that has
    won back ``recovery_fraction`` of the drop.  Scanning restarts after the
    recovery epoch.  Epochs default to 1, 2, ..., len(series).
    """
    values = [float(v) for v in series]
    if len(values) < 3:
        raise ValueError("need at least 3 epochs")
    if not drop_threshold > 0:
        raise ValueError("drop threshold must be positive")
    if not 0 < recovery_fraction <= 1:
        raise ValueError("recovery fraction must lie in (0, 1]")
    epochs = list(range(1, len(values) + 1)) if epochs is None else list(epochs)
    if len(epochs) != len(values):
        raise ValueError("epochs and series lengths differ")
    slack = 1e-12

    episodes = []
    peak = trough = None
    for i, v in enumerate(values):
        if trough is None:
            if peak is None or v >= values[peak]:
                peak = i
            elif values[peak] - v >= drop_threshold - slack:
                trough = i
            continue
        if v < values[trough]:
            trough = i
            continue
        drop = values[peak] - values[trough]
        if v - values[trough] >= recovery_fraction * drop - slack:
            episodes.append(DoubleDescentEpisode(
                peak_epoch=epochs[peak], trough_epoch=epochs[trough], recovery_epoch=epochs[i],
                drop=drop, recovered_fraction=(v - values[trough]) / drop))
            peak = trough = None
    return episodes
