"""Minimal image codecs.

Binary PPM (P6) and PGM (P5) with 8-bit samples are handled natively.  PNG
and JPEG go through Pillow when it is installed.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import DataError

try:  # optional codec backend
    from PIL import Image as _PIL
except ImportError:  # pragma: no cover - exercised only without Pillow
    _PIL = None

NATIVE_SUFFIXES = (".ppm", ".pgm", ".pnm")
PIL_SUFFIXES = (".png", ".jpg", ".jpeg")

_HEADER = re.compile(rb"(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def supported_suffixes():
    return NATIVE_SUFFIXES + (PIL_SUFFIXES if _PIL is not None else ())


def decode_pnm(raw):
    """Decode P5/P6 bytes into a uint8 array shaped (C, H, W)."""
    m = _HEADER.match(raw)
    if not m:
        raise ValueError("not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"only 8-bit samples supported (maxval {maxval})")
    c = 3 if magic == b"P6" else 1
    body = raw[m.end():m.end() + w * h * c]
    if len(body) != w * h * c:
        raise ValueError("truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, c).transpose(2, 0, 1).copy()


def encode_pnm(pixels):
    """Encode a uint8 array shaped (C, H, W), C in {1, 3}, as P5/P6 bytes."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise ValueError(f"PNM needs 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode() + pixels.transpose(1, 2, 0).tobytes()


def read_image_bytes(path):
    """Read an image file as uint8 (C, H, W); raise DataError naming the file on failure."""
    suffix = os.path.splitext(path)[1].lower()
    try:
        if suffix in NATIVE_SUFFIXES:
            with open(path, "rb") as fh:
                return decode_pnm(fh.read())
        if suffix in PIL_SUFFIXES and _PIL is not None:
            with _PIL.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            return arr.transpose(2, 0, 1).copy()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    raise DataError(f"cannot decode image {path}: unsupported format {suffix or '(none)'}")


def write_pnm(path, pixels):
    with open(path, "wb") as fh:
        fh.write(encode_pnm(pixels))


def to_bytes(img):
    """[0, 1] float image -> uint8 via x255 and rounding."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
