"""Gaussian pyramid construction and image ingestion.

A pyramid holds the source image followed by progressively blurred and
2x-decimated copies. Level count is chosen so the top level is roughly
glimpse-sized (64 px). Images are grayscale float32 in [0, 1], shape [H, W].
"""

from __future__ import annotations

import math

import numpy as np

# 5-tap binomial approximation of a Gaussian; taps sum to 1 exactly in
# binary floating point.
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=np.float64) / 16.0

PATCH_SIZE = 64


class PyramidError(ValueError):
    """Invalid pyramid construction request."""


def num_levels(width: int, height: int, patch_size: int = PATCH_SIZE) -> int:
    """Level count N such that the top level is roughly patch-sized.

    N = max(1, round(log2(max(width, height) / patch_size)) + 1). A
    2400x1935 image gives N=6 with a 75-px top level; anything already at
    or below patch size gives 1.
    """
    if width < 1 or height < 1:
        raise PyramidError(f"num_levels: dims must be positive, got {width}x{height}")
    side = max(width, height)
    n = round(math.log2(side / patch_size)) + 1
    return max(1, n)


def _blur_axis(image: np.ndarray, axis: int) -> np.ndarray:
    """5-tap binomial blur along one axis with clamp-to-edge borders."""
    padded = np.pad(image, [(2, 2) if a == axis else (0, 0) for a in range(2)],
                    mode="edge")
    out = np.zeros_like(image, dtype=np.float64)
    n = image.shape[axis]
    sl = [slice(None), slice(None)]
    for tap in range(5):
        sl[axis] = slice(tap, tap + n)
        out += _BINOMIAL5[tap] * padded[tuple(sl)]
    return out


def gaussian_blur(image: np.ndarray) -> np.ndarray:
    """Separable 5-tap binomial blur; preserves the mean of constant images
    exactly because the kernel sums to 1."""
    return _blur_axis(_blur_axis(image.astype(np.float64), 0), 1)


def downsample(image: np.ndarray) -> np.ndarray:
    """Blur then decimate by 2 keeping even-indexed samples.

    Output dims are ceil(dim / 2). Rejects inputs too small to halve.
    """
    h, w = image.shape
    if h < 2 or w < 2:
        raise PyramidError(f"downsample: input must be at least 2x2, got {h}x{w}")
    blurred = gaussian_blur(image)
    return blurred[::2, ::2].astype(np.float32)


class GaussianPyramid:
    """Immutable stack of progressively halved images.

    ``levels[0]`` is the source unmodified; ``levels[i]`` has dims
    ceil(levels[i-1] / 2). Total extra storage is under a third of the
    source pixel count (geometric series).
    """

    __slots__ = ("levels", "source_width", "source_height")

    def __init__(self, levels):
        self.levels = tuple(levels)
        self.source_height, self.source_width = self.levels[0].shape

    @property
    def n(self) -> int:
        return len(self.levels)

    def __len__(self) -> int:
        return len(self.levels)


def build_pyramid(image: np.ndarray, n: int | None = None) -> GaussianPyramid:
    """Build an n-level pyramid; n defaults to num_levels(image dims)."""
    if image.ndim != 2:
        raise PyramidError(f"build_pyramid: image must be 2-D grayscale, got shape {image.shape}")
    h, w = image.shape
    if n is None:
        n = num_levels(w, h)
    if n < 1:
        raise PyramidError(f"build_pyramid: need at least 1 level, got {n}")
    levels = [np.ascontiguousarray(image, dtype=np.float32)]
    for _ in range(n - 1):
        prev = levels[-1]
        if prev.shape[0] < 2 or prev.shape[1] < 2:
            raise PyramidError(
                f"build_pyramid: cannot reach {n} levels, level {len(levels)} "
                f"is already {prev.shape[1]}x{prev.shape[0]}")
        levels.append(downsample(prev))
    return GaussianPyramid(levels)


def load_gray_image(path) -> np.ndarray:
    """Decode an image file to grayscale float32 in [0, 1].

    8-bit grayscale is divided by 255; color inputs are converted via
    luminance (0.299 R + 0.587 G + 0.114 B).
    """
    from PIL import Image

    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img.convert("L"), dtype=np.float32)
        else:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
            arr = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return (arr / 255.0).astype(np.float32)


def save_gray_image(image: np.ndarray, path) -> None:
    """Write a [0,1] float image as 8-bit grayscale (format from extension)."""
    from PIL import Image

    data = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8), mode="L").save(path)
