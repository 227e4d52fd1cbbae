"""Dense multichannel maps and their on-disk container.

A feature map is a numpy array of shape ``(channels, height, width)`` in
row-major ``(c, row, column)`` order; downstream morphology relies on this
fixed traversal order for deterministic tie-breaking.  Binary maps are 2-D
``uint8`` arrays with values 0/1.

The binary container stores a little-endian header (magic, version,
channels, width, height as unsigned 32-bit) followed by IEEE-754
little-endian 32-bit values, so a round trip is bit-exact at float32
resolution.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = 0x50414D46  # "FMAP" little-endian
VERSION = 1
_HEADER = struct.Struct("<5I")


class ShapeMismatchError(ValueError):
    """Operands do not share the required shape."""


class MapFormatError(ValueError):
    """Map container is structurally invalid."""


class MalformedHeaderError(MapFormatError):
    """Container header is missing, short, or has a bad magic/version."""


class TruncatedPayloadError(MapFormatError):
    """Container payload ends before the declared value count."""


def new_map(channels, height, width, fill=0.0, dtype=np.float32):
    """Allocate a ``(channels, height, width)`` map filled with a constant."""
    if channels <= 0 or height <= 0 or width <= 0:
        raise ValueError("map dimensions must be positive")
    return np.full((channels, height, width), fill, dtype=dtype)


def check_feature_map(m, name="map"):
    """Validate a feature map: 3-D float array with finite values."""
    m = np.asarray(m)
    if m.ndim != 3:
        raise ShapeMismatchError(f"{name} must be (channels, height, width), got shape {m.shape}")
    if not np.issubdtype(m.dtype, np.floating):
        m = m.astype(np.float32)
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def check_binary_map(b, name="binary map"):
    b = np.asarray(b)
    if b.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {b.shape}")
    if not np.isin(b, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return b.astype(np.uint8)


def check_same_shape(a, b, what="operands"):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def map_add(a, b):
    """Element-wise sum of two same-shape maps (the residual composition)."""
    a = check_feature_map(a, "left operand")
    b = check_feature_map(b, "right operand")
    check_same_shape(a, b)
    return a + b


def threshold(m, channel, t):
    """Binarize one channel: pixel is 1 iff its value is strictly above ``t``."""
    m = check_feature_map(m)
    if not 0 <= channel < m.shape[0]:
        raise IndexError(f"channel {channel} out of range for {m.shape[0]}-channel map")
    return (m[channel] > t).astype(np.uint8)


def save_map(path, m):
    """Write a map to the binary container (float32 little-endian payload)."""
    m = check_feature_map(m)
    c, h, w = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, c, w, h))
        fh.write(payload)


def load_map(path):
    """Read a map from the binary container.

    Raises MalformedHeaderError for a short header or wrong magic/version,
    TruncatedPayloadError when values are missing, and MapFormatError for
    trailing bytes or non-finite values.
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise MalformedHeaderError(f"{path}: header truncated ({len(header)} bytes)")
        magic, version, c, w, h = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MalformedHeaderError(f"{path}: bad magic 0x{magic:08x}")
        if version != VERSION:
            raise MalformedHeaderError(f"{path}: unsupported version {version}")
        if c == 0 or w == 0 or h == 0:
            raise MalformedHeaderError(f"{path}: zero dimension in header ({c}x{w}x{h})")
        expected = c * h * w * 4
        payload = fh.read()
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} payload bytes, found {len(payload)}"
        )
    if len(payload) > expected:
        raise MapFormatError(f"{path}: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise MapFormatError(f"{path}: non-finite values in payload")
    return data.copy()


def save_pgm(path, image, lo=0.0, hi=1.0):
    """Export a 2-D array as an 8-bit binary PGM, scaling [lo, hi] to [0, 255].

    A degenerate range (hi == lo) renders as uniform mid-gray (128).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeMismatchError(f"PGM export needs a 2-D array, got shape {image.shape}")
    if hi == lo:
        pixels = np.full(image.shape, 128, dtype=np.uint8)
    else:
        scaled = (image - lo) / (hi - lo)
        pixels = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
