"""CNN + MLP landmark model: presets, initialization, serialization.

One CNN (shared across all pyramid levels) maps each 64x64 patch to a
C x 8 x 8 activation volume; the MLP maps the concatenated spatialized
features to a 2-D offset in full-resolution pixels. Two presets:

- "tiny": three conv3x3-32 / relu / maxpool2 stages, output 32x8x8.
  Small enough to train from scratch in minutes.
- "resnet34-trunc": the truncated residual architecture (stem stride
  dropped to 1, final three blocks and the classifier removed, output
  256x8x8). Batch statistics are replaced by per-patch channel
  normalization so single-patch forward passes are well defined.

Model files are little-endian binary: magic "FVPY", version u32, a JSON
metadata block, then per-tensor records. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from fovea.spatialize import flatten_and_concat, spatialize
from fovea.tensor import (
    ShapeError,
    Tensor,
    add,
    channel_norm,
    conv2d,
    linear,
    maxpool2d,
    relu,
    reshape,
)

MAGIC = b"FVPY"
FORMAT_VERSION = 1

PATCH_SHAPE = (64, 64)
MLP_HIDDEN = (512, 128)

PRESETS = {
    "tiny": {"channels": 32},
    "resnet34-trunc": {"channels": 256},
}


class ModelFormatError(ValueError):
    """Model file does not start with the expected magic bytes."""


class ModelVersionError(ValueError):
    """Model file uses an unsupported format version."""


class ModelTruncationError(ValueError):
    """Model file ends before a declared record is complete."""


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix via QR of a Gaussian draw with sign-corrected
    diagonal; rows orthonormal when rows <= cols, else columns."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"orthogonal_init: dims must be positive, got {rows}x{cols}")
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d[None, :]
    w = q if rows >= cols else q.T
    return np.ascontiguousarray(w, dtype=np.float32)


def kaiming_init(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Fan-in scaled Gaussian for conv kernels feeding relu."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


class LandmarkModel:
    """Parameter tree plus the forward pass for one landmark's regressor.

    ``params`` maps name -> Tensor in a deterministic construction order;
    the same CNN parameters process every pyramid level.
    """

    def __init__(self, preset: str, n_levels: int, params: dict, meta: dict):
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}, have {sorted(PRESETS)}")
        self.preset = preset
        self.n_levels = int(n_levels)
        self.channels = PRESETS[preset]["channels"]
        self.params = params
        self.meta = meta

    @property
    def mlp_input_width(self) -> int:
        return self.n_levels * 3 * self.channels

    def param_list(self):
        return list(self.params.values())

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    # -- forward -----------------------------------------------------------

    def cnn_forward(self, patch) -> Tensor:
        """64x64 patch -> [C, 8, 8] activation volume."""
        x = patch if isinstance(patch, Tensor) else Tensor(patch)
        if x.shape == PATCH_SHAPE:
            x = reshape(x, (1,) + PATCH_SHAPE)
        if x.shape != (1,) + PATCH_SHAPE:
            raise ShapeError(f"cnn_forward: patch must be 64x64, got {x.shape}")
        if self.preset == "tiny":
            return self._tiny_forward(x)
        return self._resnet_forward(x)

    def _tiny_forward(self, x: Tensor) -> Tensor:
        p = self.params
        for i in (1, 2, 3):
            x = conv2d(x, p[f"cnn.conv{i}.k"], p[f"cnn.conv{i}.b"],
                       stride=1, padding=1)
            x = relu(x)
            x = maxpool2d(x, size=2)
        return x

    def _resnet_forward(self, x: Tensor) -> Tensor:
        p = self.params
        x = conv2d(x, p["cnn.stem.k"], None, stride=1, padding=3)
        x = channel_norm(x, p["cnn.stem.norm.g"], p["cnn.stem.norm.b"])
        x = relu(x)
        x = maxpool2d(x, size=3, stride=2, padding=1)
        for layer, blocks in ((1, 3), (2, 4), (3, 6)):
            for b in range(blocks):
                x = self._residual_block(x, f"cnn.layer{layer}.block{b}",
                                         downsample=(layer > 1 and b == 0))
        return x

    def _residual_block(self, x: Tensor, prefix: str, downsample: bool) -> Tensor:
        p = self.params
        stride = 2 if downsample else 1
        y = conv2d(x, p[f"{prefix}.conv1.k"], None, stride=stride, padding=1)
        y = channel_norm(y, p[f"{prefix}.norm1.g"], p[f"{prefix}.norm1.b"])
        y = relu(y)
        y = conv2d(y, p[f"{prefix}.conv2.k"], None, stride=1, padding=1)
        y = channel_norm(y, p[f"{prefix}.norm2.g"], p[f"{prefix}.norm2.b"])
        if downsample:
            x = conv2d(x, p[f"{prefix}.proj.k"], None, stride=stride, padding=0)
            x = channel_norm(x, p[f"{prefix}.projnorm.g"], p[f"{prefix}.projnorm.b"])
        return relu(add(y, x))

    def mlp_forward(self, features: Tensor) -> Tensor:
        """Flat feature vector -> 2-D offset in full-resolution pixels."""
        if features.shape != (self.mlp_input_width,):
            raise ShapeError(
                f"mlp_forward: expected width {self.mlp_input_width}, got {features.shape}")
        p = self.params
        h = relu(linear(features, p["mlp.w1"], p["mlp.b1"]))
        h = relu(linear(h, p["mlp.w2"], p["mlp.b2"]))
        return linear(h, p["mlp.w3"], p["mlp.b3"])

    def forward_glimpse(self, patches: np.ndarray) -> Tensor:
        """Full regression pass over an [N, 64, 64] glimpse stack."""
        if patches.shape[0] != self.n_levels:
            raise ShapeError(
                f"forward_glimpse: model expects {self.n_levels} levels, got {patches.shape[0]}")
        feats = [spatialize(self.cnn_forward(patches[i]))
                 for i in range(self.n_levels)]
        return self.mlp_forward(flatten_and_concat(feats))


def _build_tiny_params(rng: np.random.Generator) -> dict:
    params = {}
    c_in = 1
    for i in (1, 2, 3):
        params[f"cnn.conv{i}.k"] = Tensor(
            kaiming_init((32, c_in, 3, 3), fan_in=c_in * 9, rng=rng),
            requires_grad=True)
        params[f"cnn.conv{i}.b"] = Tensor(np.zeros(32, dtype=np.float32),
                                          requires_grad=True)
        c_in = 32
    return params


def _build_resnet_params(rng: np.random.Generator) -> dict:
    params = {}

    def conv(name, c_out, c_in, k):
        params[name] = Tensor(kaiming_init((c_out, c_in, k, k), fan_in=c_in * k * k,
                                           rng=rng), requires_grad=True)

    def norm(prefix, c):
        params[f"{prefix}.g"] = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
        params[f"{prefix}.b"] = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)

    conv("cnn.stem.k", 64, 1, 7)
    norm("cnn.stem.norm", 64)
    widths = {1: (64, 64), 2: (64, 128), 3: (128, 256)}
    for layer, blocks in ((1, 3), (2, 4), (3, 6)):
        w_in, w_out = widths[layer]
        for b in range(blocks):
            prefix = f"cnn.layer{layer}.block{b}"
            c_in = w_in if b == 0 else w_out
            conv(f"{prefix}.conv1.k", w_out, c_in, 3)
            norm(f"{prefix}.norm1", w_out)
            conv(f"{prefix}.conv2.k", w_out, w_out, 3)
            norm(f"{prefix}.norm2", w_out)
            if layer > 1 and b == 0:
                conv(f"{prefix}.proj.k", w_out, c_in, 1)
                norm(f"{prefix}.projnorm", w_out)
    return params


def make_model(preset: str, n_levels: int, rng: np.random.Generator,
               meta: dict | None = None) -> LandmarkModel:
    """Fresh model: Kaiming-initialized CNN, orthogonally initialized MLP,
    zero biases."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}, have {sorted(PRESETS)}")
    if n_levels < 1:
        raise ValueError(f"make_model: n_levels must be >= 1, got {n_levels}")
    params = _build_tiny_params(rng) if preset == "tiny" else _build_resnet_params(rng)
    c = PRESETS[preset]["channels"]
    d_in = n_levels * 3 * c
    widths = [d_in, MLP_HIDDEN[0], MLP_HIDDEN[1], 2]
    for i in range(3):
        params[f"mlp.w{i + 1}"] = Tensor(
            orthogonal_init(widths[i + 1], widths[i], rng), requires_grad=True)
        params[f"mlp.b{i + 1}"] = Tensor(np.zeros(widths[i + 1], dtype=np.float32),
                                         requires_grad=True)
    full_meta = {"preset": preset, "n_levels": int(n_levels), "channels": c}
    if meta:
        full_meta.update(meta)
    return LandmarkModel(preset, n_levels, params, full_meta)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_params(model: LandmarkModel, path) -> None:
    """Write the model file plus a JSON metadata sidecar."""
    meta_bytes = json.dumps(model.meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(model.params)))
        for name, tensor in model.params.items():
            data = np.ascontiguousarray(tensor.data, dtype=np.float32)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(data.tobytes())
    with open(str(path) + ".json", "w") as fh:
        json.dump(model.meta, fh, indent=2, sort_keys=True)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ModelTruncationError(
            f"model file ends early: wanted {n} bytes for {what}, got {len(buf)}")
    return buf


def load_params(path) -> LandmarkModel:
    """Read a model file; errors distinguish bad magic, bad version, and
    truncation, and never return a partial model."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != FORMAT_VERSION:
            raise ModelVersionError(
                f"unsupported model format version {version}, expected {FORMAT_VERSION}")
        meta_len = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))[0]
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"metadata block is not valid JSON: {exc}") from exc
        count = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))[0]
        params = {}
        for idx in range(count):
            name_len = struct.unpack("<I", _read_exact(fh, 4, f"name length #{idx}"))[0]
            name = _read_exact(fh, name_len, f"name #{idx}").decode("utf-8")
            rank = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name}"))[0]
            dims = [struct.unpack("<Q", _read_exact(fh, 8, f"dim of {name}"))[0]
                    for _ in range(rank)]
            n_elem = int(np.prod(dims, dtype=np.int64)) if dims else 1
            payload = _read_exact(fh, 4 * n_elem, f"payload of {name}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
            params[name] = Tensor(arr, requires_grad=True)
    for key in ("preset", "n_levels"):
        if key not in meta:
            raise ModelFormatError(f"metadata missing required key {key!r}")
    return LandmarkModel(meta["preset"], meta["n_levels"], params, meta)
