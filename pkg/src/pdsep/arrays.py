"""Raw float32 array files and PGM/PPM renders.

An array file is ``u32 ndim, u32 extents..., f32 data`` (little-endian, C order).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dataset import FormatError


def write_array(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    header = struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def read_array(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read array {path}: {exc}") from None
    if len(data) < 4:
        raise FormatError(f"{path}: truncated array header")
    (ndim,) = struct.unpack_from("<I", data)
    if not 1 <= ndim <= 8 or len(data) < 4 + 4 * ndim:
        raise FormatError(f"{path}: invalid array header")
    shape = struct.unpack_from(f"<{ndim}I", data, 4)
    body = data[4 + 4 * ndim:]
    if len(body) != 4 * int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f"{path}: payload does not match shape {shape}")
    return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(shape)


def to_bytes8(image: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to 0..255, clipping anything outside."""
    return np.round((np.clip(image, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    """Write an (H, W) or (H, W, 1) image as binary PGM, (H, W, 3) as PPM."""
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot render an array of shape {img.shape} as PGM/PPM")
    h, w = img.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + to_bytes8(img).tobytes())
