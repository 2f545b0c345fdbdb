"""Binary model files.

Layout, all integers unsigned 32-bit little-endian::

    b"GSEG" | version | config length | config text (UTF-8, key = value lines)
    | tensor count | per tensor: name length, name, rank, dims..., float32 data

Tensors are stored at 32-bit precision regardless of the training dtype.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .config import format_config, parse_config_text
from .imageio import atomic_write_bytes
from .segnet import SegNet, build
from .tensor import Tensor

MAGIC = b"GSEG"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _u32(*values) -> bytes:
    return struct.pack("<%dI" % len(values), *values)


def dumps_model(network: SegNet) -> bytes:
    cfg = format_config(network.config).encode("utf-8")
    arrays = list(network.named_arrays())
    chunks = [MAGIC, _u32(VERSION, len(cfg)), cfg, _u32(len(arrays))]
    for name, arr in arrays:
        encoded = name.encode("utf-8")
        chunks += [_u32(len(encoded)), encoded, _u32(arr.ndim, *arr.shape),
                   np.ascontiguousarray(arr, dtype="<f4").tobytes()]
    return b"".join(chunks)


def save_model(network: SegNet, path) -> None:
    atomic_write_bytes(path, dumps_model(network))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("truncated model file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads_model(buf: bytes) -> SegNet:
    r = _Reader(buf)
    magic = r.take(4)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}, expected {VERSION}")
    config, _ = parse_config_text(r.take(r.u32()).decode("utf-8"))
    skeleton = build(config, seed=0, dtype=np.float32)
    expected = OrderedDict(skeleton.named_arrays())
    count = r.u32()
    if count != len(expected):
        raise ModelFormatError(f"file holds {count} tensors, config implies {len(expected)}")
    loaded = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        dims = tuple(r.u32() for _ in range(r.u32()))
        if name not in expected:
            raise ModelFormatError(f"unexpected tensor {name!r}")
        if dims != expected[name].shape:
            raise ModelFormatError(f"tensor {name!r} has shape {dims}, expected {expected[name].shape}")
        n = int(np.prod(dims, dtype=np.int64))
        loaded[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise ModelFormatError("trailing bytes after tensor table")
    params = OrderedDict((n, Tensor(loaded[n], requires_grad=True)) for n in skeleton.params)
    buffers = OrderedDict((n, loaded[n]) for n in skeleton.buffers)
    return SegNet(config, params, buffers).eval()


def load_model(path) -> SegNet:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
