"""Reduce activation volumes to per-channel spatialized features.

Each channel's activation map is treated as a probability distribution via
a joint softmax; the feature triple is the expected x, expected y (on a
grid normalized to (x - (W+1)/2)/(W/2), i.e. (x - 4.5)/4 at W=8), and the
expected raw activation under that distribution. This turns a C x H x W
volume into 3C numbers while keeping sub-cell spatial precision, and is
differentiable end to end.
"""

from __future__ import annotations

import numpy as np

from fovea.tensor import ShapeError, Tensor, _check_finite


def _coord_grid(h: int, w: int):
    """Flat per-cell normalized coordinates, x varying fastest (row-major)."""
    gx = (np.arange(1, w + 1, dtype=np.float64) - (w + 1) / 2) / (w / 2)
    gy = (np.arange(1, h + 1, dtype=np.float64) - (h + 1) / 2) / (h / 2)
    return np.tile(gx, h), np.repeat(gy, w)


def spatialize(volume: Tensor) -> Tensor:
    """Per-channel feature triples (f_x, f_y, f_a) as a [C, 3] tensor.

    f_x = sum p_k * gx, f_y = sum p_k * gy, f_a = sum p_k * A_k with
    p_k = softmax over the channel's H*W cells. Reductions accumulate in
    float64; the backward pass is the analytically fused softmax-expectation
    gradient.
    """
    if volume.data.ndim != 3:
        raise ShapeError(f"spatialize: volume must be [C,H,W], got {volume.shape}")
    _check_finite(volume.data, "spatialize")
    c, h, w = volume.shape
    grid_x, grid_y = _coord_grid(h, w)
    a64 = volume.data.reshape(c, h * w).astype(np.float64)
    e = np.exp(a64 - a64.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    f_x = p @ grid_x
    f_y = p @ grid_y
    f_a = np.einsum("ck,ck->c", p, a64)
    out = np.stack([f_x, f_y, f_a], axis=1).astype(volume.dtype)

    def backward(grad):
        g = grad.astype(np.float64)
        u, v, t = g[:, 0:1], g[:, 1:2], g[:, 2:3]
        da = p * (u * (grid_x[None, :] - f_x[:, None])
                  + v * (grid_y[None, :] - f_y[:, None])
                  + t * (a64 - f_a[:, None] + 1.0))
        volume.accumulate_grad(da.reshape(c, h, w).astype(grad.dtype))

    return Tensor(out, _parents=(volume,), _backward=backward)


def flatten_and_concat(per_level_features) -> Tensor:
    """Assemble the regressor input: level-major, channel-major, triple
    innermost. N levels of [C, 3] features give a flat N*3*C vector."""
    feats = list(per_level_features)
    if not feats:
        raise ShapeError("flatten_and_concat: no feature blocks given")
    c = None
    for f in feats:
        if f.data.ndim != 2 or f.shape[1] != 3:
            raise ShapeError(f"flatten_and_concat: blocks must be [C,3], got {f.shape}")
        if c is None:
            c = f.shape[0]
        elif f.shape[0] != c:
            raise ShapeError(
                f"flatten_and_concat: channel count mismatch, {f.shape[0]} vs {c}")
    out = np.concatenate([f.data.reshape(-1) for f in feats])
    block = 3 * c

    def backward(grad):
        for i, f in enumerate(feats):
            if f.requires_grad:
                f.accumulate_grad(grad[i * block:(i + 1) * block].reshape(c, 3))

    return Tensor(out, _parents=tuple(feats), _backward=backward)


def heatmaps(volume: np.ndarray) -> np.ndarray:
    """Per-channel softmax probability maps (debug/visualization path)."""
    arr = np.asarray(volume, dtype=np.float64)
    c, h, w = arr.shape
    flat = arr.reshape(c, h * w)
    e = np.exp(flat - flat.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return p.reshape(c, h, w)


def export_features_csv(per_level_features, path) -> None:
    """Dump feature triples as CSV with columns level,channel,f_x,f_y,f_a."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "channel", "f_x", "f_y", "f_a"])
        for lvl, feats in enumerate(per_level_features, start=1):
            arr = feats.data if isinstance(feats, Tensor) else np.asarray(feats)
            for k in range(arr.shape[0]):
                writer.writerow([lvl, k, repr(float(arr[k, 0])),
                                 repr(float(arr[k, 1])), repr(float(arr[k, 2]))])
