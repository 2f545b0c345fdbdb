"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import os
import tempfile

import numpy as np


class ImageFormatError(ValueError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1].isspace():
            pos += 1
        elif buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header")
    return buf[start:pos], pos


def parse_netpbm(buf: bytes) -> np.ndarray:
    """Decode a P5/P6 byte string to a uint8 array ``[channels, H, W]``."""
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}; expected P5 or P6")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"malformed header field {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images (maxval 255) are supported, got {maxval}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after header")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"truncated payload: expected {need} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def encode_netpbm(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected [1|3, H, W], got {arr.shape}")
    c, h, w = arr.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + np.ascontiguousarray(arr.transpose(1, 2, 0)).tobytes()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary sibling file and rename, so readers never see partial output."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_image(path) -> np.ndarray:
    """Float image in [0, 1] shaped ``[C, H, W]`` (C = 3 for P6, 1 for P5)."""
    with open(path, "rb") as fh:
        return parse_netpbm(fh.read()).astype(np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    """Binary mask ``[1, H, W]`` of uint8, foreground where the grey value is >= 128."""
    with open(path, "rb") as fh:
        arr = parse_netpbm(fh.read())
    if arr.shape[0] != 1:
        raise ImageFormatError(f"{path}: masks must be greyscale PGM")
    return (arr >= 128).astype(np.uint8)


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, image: np.ndarray) -> None:
    """Write a ``[3, H, W]`` (P6) or ``[1, H, W]`` (P5) image with values in [0, 1]."""
    atomic_write_bytes(path, encode_netpbm(to_bytes(image)))


def write_mask(path, mask: np.ndarray) -> None:
    m = np.asarray(mask)
    if m.ndim == 2:
        m = m[None]
    atomic_write_bytes(path, encode_netpbm((m > 0).astype(np.uint8) * 255))
