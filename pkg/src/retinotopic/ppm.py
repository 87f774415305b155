"""Minimal netpbm reader/writer: binary P5 (gray) and P6 (RGB), maxval 255.

Chosen over real codecs to keep image output bit-exact and dependency-free;
every mainstream viewer opens these.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PpmError(ValueError):
    """Raised on malformed netpbm files."""


def _tokens(data: bytes):
    """Yield header tokens, skipping whitespace and # comments."""
    i = 0
    while i < len(data):
        c = data[i:i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            yield i, data[i:j]
            i = j


def read_ppm(path) -> np.ndarray:
    """Read P5/P6 into (C, H, W) uint8 with C = 1 or 3."""
    data = Path(path).read_bytes()
    toks = _tokens(data)
    try:
        _, magic = next(toks)
        (_, w_tok), (_, h_tok), (last_pos, maxval_tok) = (next(toks) for _ in range(3))
    except StopIteration:
        raise PpmError(f"{path}: incomplete header") from None
    if magic not in (b"P5", b"P6"):
        raise PpmError(f"{path}: unsupported magic {magic!r}")
    w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    if maxval != 255:
        raise PpmError(f"{path}: only maxval 255 supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    start = last_pos + len(maxval_tok) + 1  # exactly one whitespace byte after maxval
    need = w * h * channels
    raster = data[start:start + need]
    if len(raster) != need:
        raise PpmError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    arr = np.frombuffer(raster, np.uint8).reshape(h, w, channels)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_ppm(path, img: np.ndarray) -> None:
    """Write (C, H, W) or (H, W) data; floats are taken as [0, 1] and scaled."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise PpmError(f"expected (1|3, H, W) or (H, W), got shape {img.shape}")
    if a.dtype != np.uint8:
        a = (np.clip(a, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    c, h, w = a.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + a.transpose(1, 2, 0).tobytes())
