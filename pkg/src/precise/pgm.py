"""Binary PGM (P5) reading and writing, 8-bit grayscale only."""

from __future__ import annotations

import os

import numpy as np


class PGMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Yield (token, end_offset) for the first ``count`` header tokens, skipping comments."""
    pos, found = 0, []
    while len(found) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PGMError("truncated header")
        if data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise PGMError("truncated header")
            pos = nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        found.append(data[start:pos])
    return found, pos


def read_pgm(path) -> np.ndarray:
    """Return a (height, width) uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    tok, pos = _tokens(data, 4)
    if tok[0] != b"P5":
        raise PGMError(f"{path}: not a binary PGM (magic {tok[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tok[1:])
    except ValueError:
        raise PGMError(f"{path}: malformed header") from None
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise PGMError(f"{path}: unsupported dimensions or maxval")
    # exactly one whitespace byte separates header and raster
    pos += 1
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise PGMError(f"{path}: raster truncated ({len(raster)} of {width * height} bytes)")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return img


def write_pgm(path, img) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise PGMError("PGM images are 2-D")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise PGMError("pixel values must lie in [0, 255]")
        img = img.astype(np.uint8)
    h, w = img.shape
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def to_uint8(unit: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 0..255 with round-half-up."""
    return np.floor(np.clip(np.asarray(unit, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
