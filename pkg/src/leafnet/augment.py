"""Geometric image augmentation and fixed-scale resizing.

Images are float arrays shaped (C, H, W) with values in [0, 1].  Every
transform is an inverse mapping: for each output pixel we compute the
source coordinate, sample it bilinearly, and fold out-of-frame
coordinates back in with mirror reflection (``... 2 1 0 1 2 ...``, the
border pixel is not repeated).
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass

import numpy as np

# source coordinates closer than this to an integer are snapped onto it, so
# grid-aligned transforms (90 degree turns, integer shifts) are exact
_SNAP = 1e-9


@dataclass(frozen=True)
class AugmentConfig:
    horizontal_flip: bool = True
    rotation_range: float = 20.0
    zoom_range: float = 0.2
    shift_range: float = 0.2
    fill_mode: str = "reflect"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rotation_range <= 180:
            raise ValueError(f"rotation_range must be in [0, 180], got {self.rotation_range}")
        if not 0 <= self.zoom_range < 1:
            raise ValueError(f"zoom_range must be in [0, 1), got {self.zoom_range}")
        if not 0 <= self.shift_range < 1:
            raise ValueError(f"shift_range must be in [0, 1), got {self.shift_range}")
        if self.fill_mode != "reflect":
            raise ValueError(f"only fill_mode 'reflect' is supported, got {self.fill_mode!r}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AugmentParams:
    flip: bool
    angle: float
    zoom: float
    dx: float
    dy: float


def reflect_index(idx, n):
    """Fold integer indices into [0, n) by mirror reflection without edge repeat."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def _snap(coord):
    r = np.rint(coord)
    return np.where(np.abs(coord - r) < _SNAP, r, coord)


def sample_bilinear(img, rows, cols):
    """Sample ``img`` (C,H,W) at fractional (rows, cols) with reflect fill."""
    _, h, w = img.shape
    rows = _snap(rows)
    cols = _snap(cols)
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    ra, rb = reflect_index(r0, h), reflect_index(r0 + 1, h)
    ca, cb = reflect_index(c0, w), reflect_index(c0 + 1, w)
    top = img[:, ra, ca] * (1 - fc) + img[:, ra, cb] * fc
    bottom = img[:, rb, ca] * (1 - fc) + img[:, rb, cb] * fc
    return top * (1 - fr) + bottom * fr


def _affine(img, inverse):
    """Resample with ``inverse`` mapping centred output coords (y, x) to source."""
    _, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    sy, sx = inverse(yy, xx)
    out = sample_bilinear(img, sy + cy, sx + cx)
    return np.clip(out, 0.0, 1.0)


def horizontal_flip(img):
    return img[:, :, ::-1].copy()


def rotate(img, angle):
    """Rotate about the image centre by ``angle`` degrees.

    Positive angles send pixel (i, j) of a square image towards (j, H-1-i)
    at 90 degrees, i.e. clockwise as displayed with row 0 on top.
    """
    if abs(angle) > 180:
        raise ValueError(f"angle must be within [-180, 180], got {angle}")
    if angle == 0:
        return img.copy()
    theta = np.deg2rad(angle)
    c, s = np.cos(theta), np.sin(theta)
    return _affine(img, lambda y, x: (y * c - x * s, y * s + x * c))


def zoom(img, factor):
    """Centre-anchored magnification: factor 2 shows the middle half enlarged."""
    if not factor > 0:
        raise ValueError(f"zoom factor must be positive, got {factor}")
    if factor == 1:
        return img.copy()
    return _affine(img, lambda y, x: (y / factor, x / factor))


def shift(img, dx, dy):
    """Translate by ``dx`` of the width and ``dy`` of the height (fractions)."""
    if dx == 0 and dy == 0:
        return img.copy()
    _, h, w = img.shape
    oy, ox = dy * h, dx * w
    return _affine(img, lambda y, x: (y - oy, x - ox))


def resize(img, target):
    """Bilinear resize with corner-aligned sampling to ``target`` = (H, W)."""
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ValueError(f"target extents must be >= 1, got {target}")
    _, h, w = img.shape
    if (th, tw) == (h, w):
        return img.copy()
    rows = np.arange(th) * ((h - 1) / (th - 1)) if th > 1 else np.full(1, (h - 1) / 2.0)
    cols = np.arange(tw) * ((w - 1) / (tw - 1)) if tw > 1 else np.full(1, (w - 1) / 2.0)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return sample_bilinear(img, rr, cc)


def sample_rng(seed, *keys):
    """Independent generator keyed by (seed, *keys); keys may be ints or strings."""
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(words)


def draw_params(cfg, rng):
    # fixed draw order keeps streams comparable across configs
    flip = bool(rng.random() < 0.5) if cfg.horizontal_flip else False
    angle = rng.uniform(-cfg.rotation_range, cfg.rotation_range)
    factor = rng.uniform(1 - cfg.zoom_range, 1 + cfg.zoom_range)
    dx = rng.uniform(-cfg.shift_range, cfg.shift_range)
    dy = rng.uniform(-cfg.shift_range, cfg.shift_range)
    return AugmentParams(flip, float(angle), float(factor), float(dx), float(dy))


def apply_params(img, params):
    out = horizontal_flip(img) if params.flip else img
    out = rotate(out, params.angle)
    out = zoom(out, params.zoom)
    return shift(out, params.dx, params.dy)


def augment_sample(img, cfg, rng):
    """Flip, rotate, zoom, then shift with parameters drawn from ``rng``."""
    return apply_params(img, draw_params(cfg, rng))
