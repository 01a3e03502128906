"""Flat binary checkpoint format.

Layout (all integers little-endian uint32, all data little-endian
float32):

    magic "FBN1"
    tensor count
    per tensor: name length, UTF-8 name, rank, dims..., data

Writing is deterministic given the parameter dict's order, so identical
training runs produce byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

from fbnet.tensor import Tensor

MAGIC = b"FBN1"


class CheckpointError(Exception):
    """Malformed checkpoint file."""


def _u32(value):
    return struct.pack("<I", value)


def save(path, params):
    """Write {name: Tensor | ndarray} in dict order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_u32(len(params)))
        for name, value in params.items():
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            encoded = name.encode("utf-8")
            fh.write(_u32(len(encoded)))
            fh.write(encoded)
            fh.write(_u32(data.ndim))
            for dim in data.shape:
                fh.write(_u32(dim))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes for {what} at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load(path):
    """Read back {name: float32 ndarray} preserving file order."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic; not a checkpoint file: {path}")
    out = {}
    for _ in range(reader.u32("tensor count")):
        name = reader.take(reader.u32("name length"), "name").decode("utf-8")
        rank = reader.u32("rank")
        shape = tuple(reader.u32("dim") for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(reader.take(4 * n, f"data of {name}"), dtype="<f4", count=n)
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        out[name] = data.reshape(shape).astype(np.float32)
    if reader.pos != len(reader.buf):
        raise CheckpointError(f"{len(reader.buf) - reader.pos} trailing bytes after last tensor")
    return out


def load_into(path, params):
    """Strictly restore a named parameter dict from a checkpoint.

    Name sets and shapes must match exactly; dtype follows each target
    parameter.
    """
    stored = load(path)
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise CheckpointError(f"parameter names differ; missing {missing}, unexpected {extra}")
    for name, tensor in params.items():
        value = stored[name]
        if value.shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {value.shape}, parameter {tensor.data.shape}"
            )
        tensor.data[...] = value.astype(tensor.data.dtype)
