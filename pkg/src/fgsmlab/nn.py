"""Layers, the cross-entropy loss and the 5-layer CIFAR CNN.

Architecture (input 3x32x32)::

    conv(3->6, 5x5) -> relu -> maxpool 2x2     32 -> 28 -> 14
    conv(6->16, 5x5) -> relu -> maxpool 2x2    14 -> 10 -> 5
    flatten (16*5*5 = 400)
    fc 400->120 -> relu -> fc 120->84 -> relu -> fc 84->10
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import stream

KERNEL = 5
INPUT_SHAPE = (3, 32, 32)
NUM_CLASSES = 10

PARAM_SHAPES = {
    "conv1_w": (6, 3, 5, 5),
    "conv1_b": (6,),
    "conv2_w": (16, 6, 5, 5),
    "conv2_b": (16,),
    "fc1_w": (120, 400),
    "fc1_b": (120,),
    "fc2_w": (84, 120),
    "fc2_b": (84,),
    "fc3_w": (10, 84),
    "fc3_b": (10,),
}
FC_LAYERS = ("fc1", "fc2", "fc3")


def _dimension_chain(size: int = INPUT_SHAPE[1]) -> list[int]:
    chain = [size]
    for _ in range(2):
        size -= KERNEL - 1
        chain.append(size)
        size //= 2
        chain.append(size)
    return chain


def check_architecture() -> None:
    """Assert that the spatial chain 32->28->14->10->5 feeds a 400-wide fc1."""
    chain = _dimension_chain()
    assert chain == [32, 28, 14, 10, 5], chain
    c_out = PARAM_SHAPES["conv2_w"][0]
    assert c_out * chain[-1] ** 2 == PARAM_SHAPES["fc1_w"][1] == 400
    assert PARAM_SHAPES["conv1_w"][1] == INPUT_SHAPE[0]
    assert PARAM_SHAPES["conv2_w"][1] == PARAM_SHAPES["conv1_w"][0]
    assert PARAM_SHAPES["fc2_w"][1] == PARAM_SHAPES["fc1_w"][0]
    assert PARAM_SHAPES["fc3_w"][1] == PARAM_SHAPES["fc2_w"][0]
    assert PARAM_SHAPES["fc3_w"][0] == NUM_CLASSES


check_architecture()


@dataclass(frozen=True)
class Cnn5Params:
    """All weights and biases of the CNN; fc weights are stored (out, in)."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    fc3_w: Tensor
    fc3_b: Tensor

    def __post_init__(self):
        for name, t in self.items():
            if t.shape != PARAM_SHAPES[name]:
                raise ValueError(f"{name}: shape {t.shape}, expected {PARAM_SHAPES[name]}")
        if len({t.dtype for t in self.tensors()}) != 1:
            raise TypeError("all parameters must share one precision")

    @staticmethod
    def names() -> tuple[str, ...]:
        return tuple(f.name for f in fields(Cnn5Params))

    def tensors(self) -> list[Tensor]:
        return [getattr(self, n) for n in self.names()]

    def items(self):
        return [(n, getattr(self, n)) for n in self.names()]

    @property
    def dtype(self) -> np.dtype:
        return self.conv1_w.dtype

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    @classmethod
    def from_arrays(cls, arrays: dict, dtype=np.float32, requires_grad: bool = True):
        return cls(**{n: ad.leaf(PARAM_SHAPES[n], np.asarray(arrays[n]),
                                 requires_grad=requires_grad, dtype=dtype)
                      for n in cls.names()})

    def weight(self, layer: str) -> Tensor:
        return getattr(self, f"{layer}_w")


def init_params(seed: int, dtype=np.float32) -> Cnn5Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    check_architecture()
    rng = stream(seed, "init")
    arrays = {}
    for layer in ("conv1", "conv2", "fc1", "fc2", "fc3"):
        wshape = PARAM_SHAPES[f"{layer}_w"]
        bound = 1.0 / np.sqrt(np.prod(wshape[1:]))
        arrays[f"{layer}_w"] = rng.uniform(-bound, bound, size=wshape)
        arrays[f"{layer}_b"] = rng.uniform(-bound, bound, size=PARAM_SHAPES[f"{layer}_b"])
    return Cnn5Params.from_arrays(arrays, dtype=dtype)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid (unpadded) stride-1 cross-correlation plus per-channel bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    c_out, c_in, k, k2 = w.shape
    if c != c_in or k != k2 or b.shape != (c_out,):
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    if h < k or wd < k:
        raise ValueError(f"input {h}x{wd} smaller than the {k}x{k} kernel")
    ho, wo = h - k + 1, wd - k + 1
    cols = ad.im2col(x, k)
    out = ad.matmul(cols, ad.transpose(ad.reshape(w, (c_out, c_in * k * k))))
    out = ad.add(out, b)
    return ad.transpose(ad.reshape(out, (n, ho, wo, c_out)), (0, 3, 1, 2))


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient goes to the first maximum of each window."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = ad.reshape(x, (n, c, h // 2, 2, w // 2, 2))
    win = ad.transpose(win, (0, 1, 2, 4, 3, 5))
    win = ad.reshape(win, (n, c, h // 2, w // 2, 4))
    idx = np.argmax(win.data, axis=-1)[..., None]
    return ad.reshape(ad.select_along(win, idx, -1), (n, c, h // 2, w // 2))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"linear shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    return ad.add(ad.matmul(x, ad.transpose(w)), b)


def cnn5_forward(params: Cnn5Params, x: Tensor) -> Tensor:
    """Raw logits ``[N, 10]`` for a batch ``[N, 3, 32, 32]``."""
    if x.ndim != 4 or x.shape[1:] != INPUT_SHAPE:
        raise ValueError(f"expected input [N, 3, 32, 32], got {list(x.shape)}")
    h = maxpool2(ad.relu(conv2d(x, params.conv1_w, params.conv1_b)))
    h = maxpool2(ad.relu(conv2d(h, params.conv2_w, params.conv2_b)))
    h = ad.reshape(h, (x.shape[0], -1))
    h = ad.relu(linear(h, params.fc1_w, params.fc1_b))
    h = ad.relu(linear(h, params.fc2_w, params.fc2_b))
    return linear(h, params.fc3_w, params.fc3_b)


def cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy with max-subtraction.

    ``reduction`` is ``"mean"``, ``"sum"`` or ``"none"`` (per-example losses).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} do not match labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}")
    shift = logits.data.max(axis=1, keepdims=True)
    z = ad.sub(logits, shift)
    lse = ad.log(ad.sum(ad.exp(z), axis=1))
    picked = ad.reshape(ad.select_along(z, labels[:, None], 1), (logits.shape[0],))
    losses = ad.sub(lse, picked)
    if reduction == "none":
        return losses
    if reduction == "sum":
        return ad.sum(losses)
    if reduction == "mean":
        return ad.mean(losses)
    raise ValueError(f"unknown reduction {reduction!r}")


def per_example_loss(params: Cnn5Params, x: Tensor, y) -> Tensor:
    """Per-example cross-entropy of the CNN; the default loss for attacks and penalties."""
    return cross_entropy(cnn5_forward(params, x), y, reduction="none")


def predict(params: Cnn5Params, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    """Argmax class per image (ties go to the smallest index)."""
    out = []
    with ad.no_grad():
        for i in range(0, len(images), batch_size):
            xb = Tensor(np.asarray(images[i:i + batch_size], dtype=params.dtype))
            out.append(np.argmax(cnn5_forward(params, xb).data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
