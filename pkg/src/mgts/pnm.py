"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import os

import numpy as np


class PnmError(ValueError):
    pass


def write_ppm(path: str | os.PathLike, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise PnmError(f"PPM needs an h×w×3 uint8 array, got {arr.shape} {arr.dtype}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def write_pgm(path: str | os.PathLike, gray: np.ndarray) -> None:
    arr = np.asarray(gray)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise PnmError(f"PGM needs an h×w uint8 array, got {arr.shape} {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _read_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PnmError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PnmError(f"{path}: malformed header {tokens!r}") from None
    if maxval != 255:
        raise PnmError(f"{path}: only 8-bit files supported (maxval {maxval})")
    return magic, w, h, maxval, pos


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, w, h, _, pos = _read_header(data, path)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise PnmError(f"{path}: unsupported magic {magic!r}")
    n = w * h * channels
    body = data[pos : pos + n]
    if len(body) != n:
        raise PnmError(f"{path}: expected {n} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)
