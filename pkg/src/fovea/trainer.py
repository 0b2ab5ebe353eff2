"""Iterative error-feedback training and inference.

Each training step extracts a glimpse at the current estimate, regresses an
offset, accumulates the batch-mean l1 loss against the remaining error in
image frame, backpropagates, and applies one Adam update; the estimate then
moves by the predicted offset and the next iteration starts from a fresh
tape, so no gradient flows across iterations. Ten iterations per batch mean
ten optimizer updates per batch. Inference runs the same loop from the
training-label mean with the identity transform and never mutates
parameters.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from fovea.dataset import AnnotatedImage
from fovea.glimpse import (
    GlimpseTransform,
    IDENTITY_TRANSFORM,
    extract_glimpse,
    map_offset_to_image,
    random_transform,
)
from fovea.model import LandmarkModel, make_model, save_params
from fovea.pyramid import GaussianPyramid, build_pyramid, num_levels
from fovea.tensor import (
    AdamState,
    NonFiniteError,
    Tensor,
    adam_step,
    l1_loss,
    matvec,
    mean_of,
    zero_grads,
)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries a diagnostic state dump."""

    def __init__(self, message, dump):
        super().__init__(f"{message}\ndiagnostic dump: {json.dumps(dump, default=str)}")
        self.dump = dump


@dataclass(frozen=True)
class LandmarkStats:
    """Training-label mean and per-axis population standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    epochs: tuple = (20, 20)
    learning_rates: tuple = (1e-4, 1e-5)
    batch_size: int = 2
    iterations_train: int = 10
    iterations_infer: int = 10
    max_rotation_deg: float = 15.0
    max_scale_delta: float = 0.05
    seed: int = 0
    landmark_index: int = 0
    preset: str = "tiny"

    def __post_init__(self):
        if self.iterations_train < 1 or self.iterations_infer < 0:
            raise ValueError("iteration counts must be positive (infer may be 0)")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if len(self.epochs) != len(self.learning_rates):
            raise ValueError("epochs and learning_rates must have one entry per phase")

    def config_hash(self) -> str:
        blob = json.dumps({
            "epochs": list(self.epochs),
            "learning_rates": list(self.learning_rates),
            "batch_size": self.batch_size,
            "iterations_train": self.iterations_train,
            "max_rotation_deg": self.max_rotation_deg,
            "max_scale_delta": self.max_scale_delta,
            "seed": self.seed,
            "landmark_index": self.landmark_index,
            "preset": self.preset,
        }, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def compute_label_stats(labels) -> LandmarkStats:
    """Per-axis mean and population-denominator standard deviation."""
    pts = np.asarray(labels, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError(f"compute_label_stats: need at least 2 points of shape [n,2], got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("compute_label_stats: labels contain non-finite values")
    return LandmarkStats(mu=pts.mean(axis=0), sigma=pts.std(axis=0))


def init_estimate(mode: str, stats: LandmarkStats,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Training draws from N(mu, diag(sigma^2)); inference is exactly mu."""
    if mode == "inference":
        return stats.mu.copy()
    if mode == "training":
        if rng is None:
            raise ValueError("init_estimate: training mode needs an rng")
        return stats.mu + rng.standard_normal(2) * stats.sigma
    raise ValueError(f"init_estimate: unknown mode {mode!r}")


@dataclass
class RefineResult:
    offset: np.ndarray          # image-frame offset, full-res pixels
    next_estimate: np.ndarray   # estimate + offset
    offset_tensor: Tensor       # image-frame offset on the tape (loss input)


def refine_once(pyramid: GaussianPyramid, estimate, model: LandmarkModel,
                transform: GlimpseTransform = IDENTITY_TRANSFORM) -> RefineResult:
    """One glimpse -> CNN -> features -> MLP -> offset pass.

    The estimate enters as a constant (no gradient across iterations); the
    returned tensor is the offset already mapped to image frame, so
    l1_loss(offset_tensor, target - estimate) is the image-frame loss.
    """
    est = np.asarray(estimate, dtype=np.float64)
    glimpse = extract_glimpse(pyramid, est, transform)
    raw = model.forward_glimpse(glimpse.patches)
    mapping = transform.scale * transform.rotation_matrix()
    offset_tensor = matvec(mapping, raw)
    offset = offset_tensor.data.astype(np.float64)
    return RefineResult(offset=offset, next_estimate=est + offset,
                        offset_tensor=offset_tensor)


@dataclass
class TrainingLog:
    """Per-epoch training records plus hard step counters."""

    rows: list = field(default_factory=list)
    optimizer_steps: int = 0
    steps_per_batch: list = field(default_factory=list)

    def add_epoch(self, epoch, mean_loss, mean_radial_error_px, lr, wall_time_s):
        self.rows.append({
            "epoch": epoch,
            "mean_loss": mean_loss,
            "mean_radial_error_px": mean_radial_error_px,
            "lr": lr,
            "wall_time_s": wall_time_s,
        })

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "epoch", "mean_loss", "mean_radial_error_px", "lr", "wall_time_s"])
            writer.writeheader()
            writer.writerows(self.rows)


class PyramidCache:
    """Build each record's pyramid once; records are immutable after load."""

    def __init__(self, n_levels: int):
        self.n_levels = n_levels
        self._cache = {}

    def get(self, record: AnnotatedImage) -> GaussianPyramid:
        key = record.index
        if key not in self._cache:
            self._cache[key] = build_pyramid(record.image(), n=self.n_levels)
        return self._cache[key]


def _dataset_levels(records) -> int:
    # The first record fixes the level count (and with it the MLP width);
    # glimpse extraction itself handles any image size.
    h, w = records[0].image().shape
    return num_levels(w, h)


def train(records, config: TrainConfig, out_dir=None, landmark_name=None,
          px_per_mm=None, checkpoint_every=5):
    """Full training run for one landmark; returns (model, TrainingLog).

    Each batch performs exactly ``iterations_train`` optimizer updates (one
    per refinement iteration); estimates re-initialize per batch from the
    label statistics; augmentation transforms are drawn fresh per image per
    iteration. The learning rate switches phase after ``epochs[0]`` epochs.
    """
    if not records:
        raise ValueError("train: empty training set")
    li = config.landmark_index
    labels = [r.gt[li] for r in records]
    stats = compute_label_stats(labels)
    n_levels = _dataset_levels(records)
    meta = {
        "landmark_index": li,
        "landmark_name": landmark_name or f"L{li + 1}",
        "stats_mu": [float(v) for v in stats.mu],
        "stats_sigma": [float(v) for v in stats.sigma],
        "iterations_infer": config.iterations_infer,
        "config_hash": config.config_hash(),
        "seed": config.seed,
    }
    if px_per_mm is not None:
        meta["px_per_mm"] = float(px_per_mm)
    model = make_model(config.preset, n_levels, np.random.default_rng(config.seed),
                       meta=meta)
    state = AdamState(model.param_list())
    cache = PyramidCache(n_levels)
    log = TrainingLog()
    global_epoch = 0
    for phase, (n_epochs, lr) in enumerate(zip(config.epochs, config.learning_rates)):
        for _ in range(n_epochs):
            global_epoch += 1
            t0 = time.perf_counter()
            rng = np.random.default_rng([config.seed, global_epoch])
            order = rng.permutation(len(records))
            epoch_losses = []
            epoch_final_err = []
            for b0 in range(0, len(order), config.batch_size):
                batch = [records[i] for i in order[b0:b0 + config.batch_size]]
                pyramids = [cache.get(r) for r in batch]
                targets = [r.gt[li].astype(np.float64) for r in batch]
                estimates = [init_estimate("training", stats, rng) for _ in batch]
                batch_steps = 0
                for t in range(config.iterations_train):
                    def dump(reason):
                        return TrainingDivergedError(reason, dump={
                            "epoch": global_epoch,
                            "batch_start": int(b0),
                            "iteration": t + 1,
                            "lr": lr,
                            "estimates": [e.tolist() for e in estimates],
                            "targets": [tg.tolist() for tg in targets],
                            "recent_losses": epoch_losses[-5:],
                        })

                    zero_grads(state.params)
                    losses = []
                    try:
                        for j, (pyr, tgt) in enumerate(zip(pyramids, targets)):
                            transform = random_transform(
                                rng, config.max_rotation_deg, config.max_scale_delta)
                            result = refine_once(pyr, estimates[j], model, transform)
                            residual = tgt - estimates[j]
                            losses.append(l1_loss(result.offset_tensor,
                                                  Tensor(residual.astype(np.float32))))
                            estimates[j] = result.next_estimate
                    except NonFiniteError as exc:
                        raise dump(f"non-finite forward pass: {exc}") from exc
                    loss = mean_of(losses)
                    loss_val = loss.item()
                    if not np.isfinite(loss_val):
                        raise dump("training loss is non-finite")
                    loss.backward()
                    adam_step(state, lr)
                    log.optimizer_steps += 1
                    batch_steps += 1
                    epoch_losses.append(loss_val)
                log.steps_per_batch.append(batch_steps)
                epoch_final_err.extend(
                    float(np.hypot(*(estimates[j] - targets[j])))
                    for j in range(len(batch)))
            log.add_epoch(global_epoch, float(np.mean(epoch_losses)),
                          float(np.mean(epoch_final_err)), lr,
                          time.perf_counter() - t0)
            if out_dir is not None and global_epoch % checkpoint_every == 0:
                save_params(model, f"{out_dir}/checkpoint_ep{global_epoch:03d}.fvpy")
    return model, log


def stats_from_model(model: LandmarkModel) -> LandmarkStats:
    try:
        mu = np.asarray(model.meta["stats_mu"], dtype=np.float64)
        sigma = np.asarray(model.meta["stats_sigma"], dtype=np.float64)
    except KeyError as exc:
        raise ValueError(f"model metadata lacks label statistics ({exc})") from exc
    return LandmarkStats(mu=mu, sigma=sigma)


def infer_trace(pyramid: GaussianPyramid, model: LandmarkModel,
                stats: LandmarkStats | None = None,
                iterations: int = 10) -> np.ndarray:
    """Estimates after 0..iterations refinements, shape [iterations+1, 2].

    Starts from the label mean, identity transform throughout, parameters
    untouched. Gradient bookkeeping is disabled for the duration.
    """
    if stats is None:
        stats = stats_from_model(model)
    est = init_estimate("inference", stats)
    trace = [est.copy()]
    flags = [p.requires_grad for p in model.params.values()]
    model.set_trainable(False)
    try:
        for _ in range(iterations):
            est = refine_once(pyramid, est, model).next_estimate
            trace.append(est.copy())
    finally:
        for p, flag in zip(model.params.values(), flags):
            p.requires_grad = flag
    return np.asarray(trace)


def infer(pyramid: GaussianPyramid, model: LandmarkModel,
          stats: LandmarkStats | None = None, iterations: int = 10) -> np.ndarray:
    """Final estimate after ``iterations`` refinements from the label mean."""
    return infer_trace(pyramid, model, stats, iterations)[-1]
