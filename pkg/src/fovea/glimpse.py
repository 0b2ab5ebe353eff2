"""Glimpse extraction: N stacked 64x64 patches centered on a focal point.

Patch i (1-indexed) samples pyramid level i at locations
focal / 2^(i-1) + s * R(theta) * u for glimpse offsets u in
{-31.5, ..., +31.5} per axis, so the grid is symmetric about the focal
point. Sampling is bilinear with pixel centers at integer + 0.5; taps
outside the level contribute zero. Axis convention: x right, y down,
positive theta rotates x toward y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fovea.pyramid import GaussianPyramid, PATCH_SIZE

# Offsets of the 64 sample columns/rows from the focal point, in pixels
# of the sampled level.
_GRID_OFFSETS = (np.arange(PATCH_SIZE, dtype=np.float64) - PATCH_SIZE / 2) + 0.5


@dataclass(frozen=True)
class GlimpseTransform:
    """Rotation (radians) and scale applied to the sampling grid about the
    focal point. Identity is (0, 1)."""

    theta: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"GlimpseTransform: scale must be positive, got {self.scale}")

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]], dtype=np.float64)


IDENTITY_TRANSFORM = GlimpseTransform()


@dataclass(frozen=True)
class Glimpse:
    """The network's entire per-iteration view of one image."""

    patches: np.ndarray  # [N, 64, 64] float32
    focal: np.ndarray    # (x, y) in full-resolution pixels
    transform: GlimpseTransform

    @property
    def n(self) -> int:
        return self.patches.shape[0]


def _sample_grid(level_focal_x, level_focal_y, transform):
    """Continuous sample coordinates, shape [64, 64] each for x and y."""
    ux, uy = np.meshgrid(_GRID_OFFSETS, _GRID_OFFSETS)
    c, s = math.cos(transform.theta), math.sin(transform.theta)
    k = transform.scale
    px = level_focal_x + k * (c * ux - s * uy)
    py = level_focal_y + k * (s * ux + c * uy)
    return px, py


def _bilinear(level: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Bilinear read at continuous coords; out-of-bounds taps contribute 0."""
    h, w = level.shape
    gx = px - 0.5
    gy = py - 0.5
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    wx = gx - x0
    wy = gy - y0
    out = np.zeros(px.shape, dtype=np.float64)
    for dy, dx, wgt in ((0, 0, (1 - wx) * (1 - wy)),
                        (0, 1, wx * (1 - wy)),
                        (1, 0, (1 - wx) * wy),
                        (1, 1, wx * wy)):
        xs = x0 + dx
        ys = y0 + dy
        valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        vals = level[np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)]
        out += np.where(valid, vals * wgt, 0.0)
    return out.astype(np.float32)


def sample_patch(level: np.ndarray, level_index: int, focal,
                 transform: GlimpseTransform = IDENTITY_TRANSFORM) -> np.ndarray:
    """One 64x64 patch from a pyramid level (1-indexed) around ``focal``.

    ``focal`` is (x, y) in full-resolution pixels; the level's own
    coordinate is focal / 2^(level_index - 1).
    """
    if level_index < 1:
        raise ValueError(f"sample_patch: level_index is 1-based, got {level_index}")
    fx, fy = float(focal[0]), float(focal[1])
    divisor = 2.0 ** (level_index - 1)
    px, py = _sample_grid(fx / divisor, fy / divisor, transform)
    return _bilinear(level, px, py)


def extract_glimpse(pyramid: GaussianPyramid, focal,
                    transform: GlimpseTransform = IDENTITY_TRANSFORM) -> Glimpse:
    """The full N x 64 x 64 glimpse at ``focal``; always N * 4096 samples
    regardless of source image size."""
    patches = np.stack([
        sample_patch(level, i + 1, focal, transform)
        for i, level in enumerate(pyramid.levels)
    ])
    return Glimpse(patches=patches, focal=np.asarray(focal, dtype=np.float64),
                   transform=transform)


def random_transform(rng: np.random.Generator,
                     max_rotation_deg: float = 15.0,
                     max_scale_delta: float = 0.05) -> GlimpseTransform:
    """Training augmentation draw: theta uniform in +-max_rotation_deg,
    scale uniform in 1 +- max_scale_delta."""
    theta = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
    scale = rng.uniform(1.0 - max_scale_delta, 1.0 + max_scale_delta)
    return GlimpseTransform(theta=theta, scale=scale)


def map_offset_to_image(transform: GlimpseTransform, offset) -> np.ndarray:
    """Map a prediction made in the augmented glimpse frame back to an
    image-frame displacement: s * R(theta) * offset. A target seen at
    glimpse coordinate u lies at image displacement s * R(theta) * u, so
    the sampling transform itself is the correct mapping."""
    off = np.asarray(offset, dtype=np.float64)
    return transform.scale * (transform.rotation_matrix() @ off)


def inverse_map_offset(transform: GlimpseTransform, offset) -> np.ndarray:
    """Inverse of map_offset_to_image: R(-theta) * offset / s."""
    off = np.asarray(offset, dtype=np.float64)
    return (transform.rotation_matrix().T @ off) / transform.scale


def count_touched_pixels(level: np.ndarray, level_index: int, focal,
                         transform: GlimpseTransform = IDENTITY_TRANSFORM) -> int:
    """Number of distinct in-bounds source pixels the bilinear sampler
    reads for one patch. For identity transforms this is at most 65^2."""
    h, w = level.shape
    fx, fy = float(focal[0]), float(focal[1])
    divisor = 2.0 ** (level_index - 1)
    px, py = _sample_grid(fx / divisor, fy / divisor, transform)
    x0 = np.floor(px - 0.5).astype(np.int64)
    y0 = np.floor(py - 0.5).astype(np.int64)
    taps = []
    for dy in (0, 1):
        for dx in (0, 1):
            xs = (x0 + dx).reshape(-1)
            ys = (y0 + dy).reshape(-1)
            valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            taps.append(ys[valid] * w + xs[valid])
    if not taps:
        return 0
    return int(np.unique(np.concatenate(taps)).size)
