"""Linear-radiance images, PNG I/O with sRGB transfer, and the crop/blend patch sampler."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import png


class ImageFormatError(ValueError):
    """Raised for PNG files this toolkit cannot decode."""


@dataclass(frozen=True, eq=False)
class LinearImage:
    """H x W x C grid of non-negative linear radiance (C is 1 or 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"LinearImage needs shape (H, W, 1|3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("LinearImage values must be finite")
        if np.any(arr < 0):
            raise ValueError("LinearImage values must be >= 0")
        if arr is self.data or not arr.flags.owndata:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_rgb(self) -> "LinearImage":
        if self.channels == 3:
            return self
        return LinearImage(np.repeat(self.data, 3, axis=2))

    def luminance(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ np.array([0.2126, 0.7152, 0.0722], dtype=np.float32)

    def __eq__(self, other) -> bool:
        return isinstance(other, LinearImage) and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class PatchSample:
    photo_patch: LinearImage
    diffuse_patch: LinearImage
    origin: tuple[int, int]
    blended: bool = False


# -- sRGB transfer ---------------------------------------------------------------

def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


# -- PNG I/O -------------------------------------------------------------------

def read_png(path: str | Path) -> np.ndarray:
    """Decode a PNG to an H x W x C float64 array in [0, 1], no transfer function applied."""
    try:
        reader = png.Reader(filename=str(path))
        width, height, rows, info = reader.read()
        planes = info["planes"]
        bitdepth = info["bitdepth"]
        if info.get("palette"):
            raise ImageFormatError(f"{path}: palette PNGs are not supported")
        if bitdepth not in (8, 16):
            raise ImageFormatError(f"{path}: unsupported bit depth {bitdepth} (need 8 or 16)")
        if planes not in (1, 3):
            raise ImageFormatError(f"{path}: unsupported channel count {planes} (need gray or RGB, no alpha)")
        arr = np.vstack([np.asarray(r, dtype=np.uint16) for r in rows])
    except png.Error as exc:
        raise ImageFormatError(f"{path}: unreadable PNG ({exc})") from exc
    except FileNotFoundError:
        raise
    return arr.reshape(height, width, planes).astype(np.float64) / (2 ** bitdepth - 1)


def write_png(values: np.ndarray, path: str | Path) -> None:
    """Write an H x W x C array of [0, 1] values as an 8-bit PNG, no transfer function."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    if c not in (1, 3):
        raise ValueError(f"can only write 1 or 3 channels, got {c}")
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    writer = png.Writer(width=w, height=h, greyscale=(c == 1), bitdepth=8)
    with open(path, "wb") as fh:
        writer.write(fh, q.reshape(h, w * c))


def load_image(path: str | Path) -> LinearImage:
    """Read an 8/16-bit gray or RGB PNG and decode sRGB to linear radiance."""
    return LinearImage(srgb_to_linear(read_png(path)).astype(np.float32))


def save_image(img: LinearImage, path: str | Path) -> None:
    """Clamp to [0, 1], encode linear to sRGB, write an 8-bit PNG."""
    write_png(linear_to_srgb(img.data), path)


# -- crops and blends ------------------------------------------------------------

def crop(img: LinearImage, x: int, y: int, s: int) -> LinearImage:
    if s <= 0 or x < 0 or y < 0 or x + s > img.width or y + s > img.height:
        raise ValueError(f"crop ({x}, {y}, {s}) is outside a {img.width}x{img.height} image")
    return LinearImage(img.data[y:y + s, x:x + s])


def blend(a: LinearImage, b: LinearImage, w: float) -> LinearImage:
    if a.shape != b.shape:
        raise ValueError(f"blend: dimension mismatch {a.shape} vs {b.shape}")
    if not 0.0 <= w <= 1.0:
        raise ValueError("blend weight must lie in [0, 1]")
    if w == 1.0:
        return a
    if w == 0.0:
        return b
    out = w * a.data.astype(np.float64) + (1.0 - w) * b.data.astype(np.float64)
    # keep the convex-combination bounds exact after rounding to float32
    lo = np.minimum(a.data, b.data)
    hi = np.maximum(a.data, b.data)
    return LinearImage(np.clip(out.astype(np.float32), lo, hi))


def sample_training_patch(photos: Sequence[LinearImage], guessed_diffuse: LinearImage,
                          patch_size: int, rng: np.random.Generator) -> PatchSample:
    """Draw one augmented training input with its aligned diffuse prior.

    Half of the draws crop a single random photo; the other half blend two
    distinct photos cropped at the same origin with a Uniform(0, 1) weight.
    """
    if not photos:
        raise ValueError("need at least one photo")
    h, w = guessed_diffuse.height, guessed_diffuse.width
    for p in photos:
        if (p.height, p.width) != (h, w):
            raise ValueError("photos and guessed diffuse map must share one size")
    if patch_size > min(h, w):
        raise ValueError(f"patch size {patch_size} exceeds image size {w}x{h}")

    want_blend = rng.random() < 0.5
    x = int(rng.integers(0, w - patch_size + 1))
    y = int(rng.integers(0, h - patch_size + 1))
    diffuse = crop(guessed_diffuse, x, y, patch_size)
    if want_blend and len(photos) >= 2:
        i, j = rng.choice(len(photos), size=2, replace=False)
        weight = float(rng.random())
        photo = blend(crop(photos[i], x, y, patch_size), crop(photos[j], x, y, patch_size), weight)
        return PatchSample(photo, diffuse, (x, y), blended=True)
    i = int(rng.integers(0, len(photos)))
    return PatchSample(crop(photos[i], x, y, patch_size), diffuse, (x, y), blended=False)
