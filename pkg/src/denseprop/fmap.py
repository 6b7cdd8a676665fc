"""Feature maps and their binary file format.

A feature map is a C-contiguous float32/float64 ndarray of shape
(channels, height, width): channel-major, row-major within a channel, so
consecutive x positions are consecutive in memory. Engine operations never
mutate their inputs and always return fresh arrays.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, NamedTuple

import numpy as np

FMAP_MAGIC = b"FMAP"
_HEADER = struct.Struct("<4sIII")

FLOAT_DTYPES = (np.float32, np.float64)


class Shape(NamedTuple):
    channels: int
    height: int
    width: int


def as_feature_map(a, dtype=None) -> np.ndarray:
    """Validate/coerce an array-like into feature-map layout."""
    m = np.asarray(a, dtype=dtype)
    if m.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        m = m.astype(np.float64)
    if m.ndim == 2:
        m = m[np.newaxis]
    if m.ndim != 3:
        raise ValueError(f"feature map must be (channels, height, width), got shape {m.shape}")
    if min(m.shape) < 1:
        raise ValueError(f"feature map dimensions must be >= 1, got {m.shape}")
    return np.ascontiguousarray(m)


def shape_of(m: np.ndarray) -> Shape:
    c, h, w = m.shape
    return Shape(c, h, w)


def pad(m: np.ndarray, margin: int, value: float = 0.0) -> np.ndarray:
    """Pad every spatial border by `margin` pixels filled with `value`."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    return pad_rect(m, margin, margin, margin, margin, value)


def pad_rect(m: np.ndarray, top: int, bottom: int, left: int, right: int,
             value: float = 0.0) -> np.ndarray:
    """Pad with possibly different margins per side (even patch sizes need this)."""
    if min(top, bottom, left, right) < 0:
        raise ValueError("padding margins must be >= 0")
    c, h, w = m.shape
    out = np.full((c, h + top + bottom, w + left + right), value, dtype=m.dtype)
    out[:, top:top + h, left:left + w] = m
    return out


def crop_patch(m: np.ndarray, center_y: int, center_x: int, size: int) -> np.ndarray:
    """Copy the size x size window whose center pixel is (center_y, center_x).

    The center of an even-sized window is its (size//2, size//2) entry. The
    window must lie fully inside the map; pad first for border centers.
    """
    if size < 1:
        raise ValueError(f"patch size must be >= 1, got {size}")
    top = center_y - size // 2
    left = center_x - size // 2
    _, h, w = m.shape
    if top < 0 or left < 0 or top + size > h or left + size > w:
        raise ValueError(
            f"{size}x{size} patch at center ({center_y}, {center_x}) leaves the "
            f"{h}x{w} map; pad the map first"
        )
    return m[:, top:top + size, left:left + size].copy()


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Largest entrywise |a - b|; 0.0 iff the maps are identical."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def write_fmap(f: BinaryIO | str, m: np.ndarray) -> None:
    """Write one record: 16-byte header (magic, C, H, W as u32 LE) + f32 LE data."""
    if isinstance(f, str):
        with open(f, "wb") as fh:
            write_fmap(fh, m)
        return
    c, h, w = m.shape
    f.write(_HEADER.pack(FMAP_MAGIC, c, h, w))
    f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def write_fmap_all(path: str, maps) -> None:
    with open(path, "wb") as fh:
        for m in maps:
            write_fmap(fh, m)


def read_fmap_record(f: BinaryIO) -> np.ndarray | None:
    """Read the next record from an open stream; None at clean EOF."""
    header = f.read(_HEADER.size)
    if not header:
        return None
    if len(header) != _HEADER.size:
        raise ValueError("truncated FMAP header")
    magic, c, h, w = _HEADER.unpack(header)
    if magic != FMAP_MAGIC:
        raise ValueError(f"bad FMAP magic {magic!r}")
    count = c * h * w
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated FMAP data")
    data = np.frombuffer(raw, dtype="<f4", count=count)
    return np.ascontiguousarray(data.reshape(c, h, w).astype(np.float32))


def read_fmap(path: str) -> np.ndarray:
    """Read a file holding exactly one record."""
    with open(path, "rb") as fh:
        m = read_fmap_record(fh)
        if m is None:
            raise ValueError(f"{path}: empty FMAP file")
        if fh.read(1):
            raise ValueError(f"{path}: trailing data after first FMAP record")
    return m


def read_fmap_all(path: str) -> list[np.ndarray]:
    out = []
    with open(path, "rb") as fh:
        while (m := read_fmap_record(fh)) is not None:
            out.append(m)
    return out
