"""Binary PPM (P6) and PGM (P5) reading and writing."""

from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    pass


def _header(kind: bytes, width: int, height: int, maxval: int) -> bytes:
    return b"%s\n%d %d\n%d\n" % (kind, width, height, maxval)


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit RGB; ``image`` is HxWx3 uint8."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise NetpbmError(f"PPM needs an HxWx3 uint8 array, got {image.shape} {image.dtype}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(_header(b"P6", w, h, 255))
        fh.write(np.ascontiguousarray(image).tobytes())


def write_pgm(path, gray: np.ndarray, maxval: int = 255) -> None:
    """Single channel; maxval > 255 selects 16-bit big-endian samples."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise NetpbmError(f"PGM needs a 2-D array, got shape {gray.shape}")
    if gray.size and (gray.min() < 0 or gray.max() > maxval):
        raise NetpbmError(f"PGM values must lie in [0, {maxval}]")
    h, w = gray.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(_header(b"P5", w, h, maxval))
        fh.write(np.ascontiguousarray(gray, dtype=dtype).tobytes())


def _read_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise NetpbmError("truncated header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_netpbm(path) -> tuple[np.ndarray, int]:
    """Return (array, maxval); HxW for PGM, HxWx3 for PPM."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        (magic, w, h, maxval), offset = _read_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (NetpbmError, ValueError) as exc:
        raise NetpbmError(f"{path}: bad header ({exc})") from None
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise NetpbmError(f"{path}: unsupported format {magic!r}")
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h * channels
    if len(data) - offset < count * np.dtype(dtype).itemsize:
        raise NetpbmError(f"{path}: truncated raster")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return raster.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8), maxval
