"""Versioned binary checkpoints of the CNN parameters.

Layout (all integers little-endian)::

    magic    8 bytes  b"FGSMCKPT"
    version  u32
    digest   32 bytes SHA-256 of the producing config
    epoch    u32
    count    u32
    count x  { name_len u16, name utf-8, ndim u8, dims u32 * ndim,
               values float32 LE row-major }
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn import PARAM_SHAPES, Cnn5Params

MAGIC = b"FGSMCKPT"
VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    arrays: dict
    epoch: int = 0
    digest: bytes = bytes(32)
    version: int = VERSION

    def params(self, dtype=np.float32, requires_grad: bool = True) -> Cnn5Params:
        return Cnn5Params.from_arrays(self.arrays, dtype=dtype, requires_grad=requires_grad)

    @classmethod
    def from_params(cls, params: Cnn5Params, epoch: int = 0, digest: bytes = bytes(32)):
        return cls({n: t.data.astype(np.float32) for n, t in params.items()}, epoch, digest)


def to_bytes(ckpt: Checkpoint) -> bytes:
    if len(ckpt.digest) != 32:
        raise ValueError("digest must be 32 bytes")
    out = [MAGIC, struct.pack("<I", ckpt.version), ckpt.digest,
           struct.pack("<II", ckpt.epoch, len(PARAM_SHAPES))]
    for name in Cnn5Params.names():
        arr = np.asarray(ckpt.arrays[name])
        if arr.shape != PARAM_SHAPES[name]:
            raise ValueError(f"{name}: shape {arr.shape}, expected {PARAM_SHAPES[name]}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def from_bytes(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise ValueError(f"{source}: truncated checkpoint at byte offset {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(8) != MAGIC:
        raise ValueError(f"{source}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ValueError(f"{source}: unsupported checkpoint version {version}")
    digest = take(32)
    epoch, count = struct.unpack("<II", take(8))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        if PARAM_SHAPES.get(name) != shape:
            raise ValueError(f"{source}: tensor {name!r} has shape {shape}, "
                             f"expected {PARAM_SHAPES.get(name)}")
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
    missing = set(PARAM_SHAPES) - arrays.keys()
    if missing:
        raise ValueError(f"{source}: missing tensors {sorted(missing)}")
    if pos != len(raw):
        raise ValueError(f"{source}: {len(raw) - pos} trailing bytes")
    return Checkpoint(arrays, epoch, digest, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), str(path))
