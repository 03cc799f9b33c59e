"""Binary PPM (P6) image I/O.

The whole pipeline writes frames as maxval-255 P6 files: trivially diffable,
bit-stable, no codec dependencies.
"""

from __future__ import annotations

import numpy as np


class PPMError(ValueError):
    """Malformed PPM data."""


def to_rgb8(image: np.ndarray) -> np.ndarray:
    """Float image in [0, 1] (H, W, C) to (H, W, 3) uint8.

    Takes the first three channels, or replicates a single channel to gray.
    Values are clipped then rounded half away from zero.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    elif img.shape[2] == 2:
        raise PPMError("cannot map 2-channel image to RGB")
    rgb = np.clip(img[:, :, :3], 0.0, 1.0)
    return (np.floor(rgb * 255.0 + 0.5)).astype(np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise PPMError(f"expected (H, W, 3) uint8, got {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def write_ppm(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


def decode_ppm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise PPMError(f"not a binary PPM: starts with {data[:2]!r}")
    # header is three whitespace-separated fields, comments allowed
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        beg = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if beg == pos:
            raise PPMError("truncated header")
        fields.append(data[beg:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise PPMError(f"bad header fields {fields}") from exc
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}")
    if w <= 0 or h <= 0:
        raise PPMError(f"bad dimensions {w}x{h}")
    need = w * h * 3
    pixels = data[pos : pos + need]
    if len(pixels) != need:
        raise PPMError(f"expected {need} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())
