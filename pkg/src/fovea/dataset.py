"""Dataset loading, splits, and synthetic landmark image generation.

The on-disk layout mirrors the public cephalometric challenge corpus:

    root/
      images/001.bmp ... 400.bmp        (.png also accepted)
      annotations/junior/001.txt        one "x,y" line per landmark
      annotations/senior/001.txt
      metadata.json                     optional: px_per_mm, landmark names

Annotation files may carry extra trailing lines (the original distribution
appends classification fields); lines beyond the landmark count are
ignored. Synthetic datasets are written to the identical layout so every
downstream tool is format-agnostic.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from fovea.pyramid import load_gray_image, save_gray_image

# Canonical cephalogram landmark names, in annotation-file line order.
ISBI_LANDMARK_NAMES = (
    "Sella", "Nasion", "Orbitale", "Porion", "Subspinale", "Supramentale",
    "Pogonion", "Menton", "Gnathion", "Gonion", "Incision inferius",
    "Incision superius", "Upper lip", "Lower lip", "Subnasale",
    "Soft tissue pogonion", "Posterior nasal spine", "Anterior nasal spine",
    "Articulare",
)

ISBI_PX_PER_MM = 10.0
ISBI_EXPECTED_DIMS = (2400, 1935)  # (width, height)
GT_MODES = ("average", "junior", "senior")


class DatasetError(ValueError):
    """Corpus layout or annotation content violates the format contract."""


@dataclass
class DatasetMeta:
    px_per_mm: float = ISBI_PX_PER_MM
    landmark_names: tuple = ISBI_LANDMARK_NAMES
    expected_width: int | None = None
    expected_height: int | None = None

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_names)


@dataclass
class AnnotatedImage:
    """One corpus entry: landmark labels plus a lazily loadable image."""

    index: int
    junior: np.ndarray
    senior: np.ndarray
    gt: np.ndarray
    image_path: str | None = None
    image_data: np.ndarray | None = field(default=None, repr=False)

    def image(self) -> np.ndarray:
        if self.image_data is not None:
            return self.image_data
        return load_gray_image(self.image_path)


def resolve_gt(junior: np.ndarray, senior: np.ndarray, gt_mode: str) -> np.ndarray:
    if gt_mode == "average":
        return (junior + senior) / 2.0
    if gt_mode == "junior":
        return junior.copy()
    if gt_mode == "senior":
        return senior.copy()
    raise DatasetError(f"unknown gt_mode {gt_mode!r}, expected one of {GT_MODES}")


def _parse_annotation_file(path: str, n_landmarks: int) -> np.ndarray:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read annotation file {path}: {exc}") from exc
    points = []
    for lineno, line in enumerate(lines, start=1):
        if len(points) == n_landmarks:
            break  # trailing classification fields are ignored
        text = line.strip()
        if not text:
            continue
        parts = text.split(",")
        if len(parts) != 2:
            raise DatasetError(
                f"{path}:{lineno}: expected 'x,y', got {line!r}")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise DatasetError(
                f"{path}:{lineno}: non-numeric coordinate in {line!r}") from exc
    if len(points) != n_landmarks:
        raise DatasetError(
            f"{path}: expected {n_landmarks} landmark lines, found {len(points)}")
    return np.array(points, dtype=np.float64)


def read_metadata(root: str) -> DatasetMeta:
    """metadata.json if present, else the cephalometric-corpus defaults."""
    path = os.path.join(root, "metadata.json")
    if not os.path.exists(path):
        return DatasetMeta()
    with open(path) as fh:
        raw = json.load(fh)
    return DatasetMeta(
        px_per_mm=float(raw.get("px_per_mm", ISBI_PX_PER_MM)),
        landmark_names=tuple(raw.get("landmark_names", ISBI_LANDMARK_NAMES)),
        expected_width=raw.get("width"),
        expected_height=raw.get("height"),
    )


def load_isbi(root: str, gt_mode: str = "average"):
    """Load a challenge-layout corpus.

    Returns (list of AnnotatedImage sorted by index, DatasetMeta). Every
    image in images/ must have both annotation files; nothing is silently
    skipped.
    """
    if gt_mode not in GT_MODES:
        raise DatasetError(f"unknown gt_mode {gt_mode!r}, expected one of {GT_MODES}")
    images_dir = os.path.join(root, "images")
    if not os.path.isdir(images_dir):
        raise DatasetError(f"missing images directory: {images_dir}")
    meta = read_metadata(root)
    entries = sorted(f for f in os.listdir(images_dir)
                     if f.lower().endswith((".bmp", ".png")))
    if not entries:
        raise DatasetError(f"no .bmp or .png images found in {images_dir}")
    records = []
    for fname in entries:
        stem = os.path.splitext(fname)[0]
        try:
            index = int(stem)
        except ValueError as exc:
            raise DatasetError(
                f"image filename {fname!r} is not a numeric index") from exc
        junior_path = os.path.join(root, "annotations", "junior", stem + ".txt")
        senior_path = os.path.join(root, "annotations", "senior", stem + ".txt")
        for p in (junior_path, senior_path):
            if not os.path.exists(p):
                raise DatasetError(f"missing annotation file: {p}")
        junior = _parse_annotation_file(junior_path, meta.n_landmarks)
        senior = _parse_annotation_file(senior_path, meta.n_landmarks)
        records.append(AnnotatedImage(
            index=index,
            junior=junior,
            senior=senior,
            gt=resolve_gt(junior, senior, gt_mode),
            image_path=os.path.join(images_dir, fname),
        ))
    records.sort(key=lambda r: r.index)
    if len(records) != len({r.index for r in records}):
        raise DatasetError("duplicate image indices in corpus")
    return records, meta


def split_challenge(records):
    """Challenge split by index: 1-150 train, 151-300 test1, 301-400 test2."""
    if len(records) != 400:
        raise DatasetError(
            f"challenge split requires exactly 400 images, got {len(records)}")
    by_index = {r.index: r for r in records}
    if sorted(by_index) != list(range(1, 401)):
        raise DatasetError("challenge split requires indices exactly 1..400")
    train = [by_index[i] for i in range(1, 151)]
    test1 = [by_index[i] for i in range(151, 301)]
    test2 = [by_index[i] for i in range(301, 401)]
    return train, test1, test2


def kfold(records, k: int = 4, seed: int = 0):
    """Seeded shuffle then contiguous folds; returns k (train, test) pairs."""
    n = len(records)
    if k < 2 or n % k != 0:
        raise DatasetError(f"k={k} must be >= 2 and divide corpus size {n}")
    order = np.random.default_rng(seed).permutation(n)
    fold_size = n // k
    folds = []
    for i in range(k):
        test_idx = set(order[i * fold_size:(i + 1) * fold_size].tolist())
        test = [records[j] for j in sorted(test_idx)]
        train = [records[j] for j in range(n) if j not in test_idx]
        folds.append((train, test))
    return folds


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Recipe for desk-scale multi-resolution landmark images.

    Each image carries a low-frequency radial brightness cue centered on
    the landmark (visible at coarse pyramid levels, ~patch-level accuracy
    on its own) and a sharp 5-px cross at the exact position (resolvable
    only near full resolution), so localization genuinely requires
    coarse-to-fine reasoning. Distractor crosses lack the radial cue.
    """

    side: int = 1024
    count: int = 64
    noise: float = 0.03
    distractor_count: int = 2
    # Base 0.1 + coarse 0.45 + cross 0.35 stays below 1.0 so the brightness
    # peak never saturates flat.
    coarse_strength: float = 0.45
    cross_strength: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.side < 128:
            raise DatasetError(f"synthetic side must be >= 128, got {self.side}")
        if self.count < 1:
            raise DatasetError(f"synthetic count must be >= 1, got {self.count}")


def _splat_cross(img: np.ndarray, cx: float, cy: float, amplitude: float) -> None:
    """Anti-aliased 5-px cross: bilinear splats along both 2-px arms."""
    h, w = img.shape
    for ox, oy in [(o, 0) for o in range(-2, 3)] + [(0, o) for o in (-2, -1, 1, 2)]:
        px, py = cx + ox, cy + oy
        gx, gy = px - 0.5, py - 0.5
        x0, y0 = int(math.floor(gx)), int(math.floor(gy))
        wx, wy = gx - x0, gy - y0
        for dy, dx, wgt in ((0, 0, (1 - wx) * (1 - wy)), (0, 1, wx * (1 - wy)),
                            (1, 0, (1 - wx) * wy), (1, 1, wx * wy)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < h and 0 <= xx < w:
                img[yy, xx] += amplitude * wgt


def render_synthetic(side: int, landmark, distractors, cfg: SyntheticConfig,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """One synthetic image with the landmark at the given position."""
    img = np.full((side, side), 0.1, dtype=np.float64)
    if cfg.noise > 0:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        img += rng.normal(0.0, cfg.noise, size=(side, side))
    # Coarse cue: radial falloff wide enough to reach the top pyramid level.
    sigma = side / 8.0
    y, x = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
    r2 = (x - landmark[0]) ** 2 + (y - landmark[1]) ** 2
    img += cfg.coarse_strength * np.exp(-r2 / (2.0 * sigma * sigma))
    for dx, dy in distractors:
        _splat_cross(img, dx, dy, cfg.cross_strength)
    _splat_cross(img, landmark[0], landmark[1], cfg.cross_strength)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def gen_synthetic(cfg: SyntheticConfig):
    """Generate ``cfg.count`` annotated images; both annotators equal truth.

    Returns (records, DatasetMeta) with in-memory image data. Landmarks are
    uniform in the central 60% of the image.
    """
    rng = np.random.default_rng(cfg.seed)
    side = cfg.side
    lo, hi = 0.2 * side, 0.8 * side
    min_sep = 0.08 * side
    records = []
    for i in range(cfg.count):
        landmark = rng.uniform(lo, hi, size=2)
        distractors = []
        while len(distractors) < cfg.distractor_count:
            cand = rng.uniform(4.0, side - 4.0, size=2)
            if np.hypot(*(cand - landmark)) >= min_sep:
                distractors.append(cand)
        img = render_synthetic(side, landmark, distractors, cfg, rng)
        labels = landmark[None, :].copy()
        records.append(AnnotatedImage(
            index=i + 1,
            junior=labels.copy(),
            senior=labels.copy(),
            gt=labels.copy(),
            image_data=img,
        ))
    meta = DatasetMeta(px_per_mm=ISBI_PX_PER_MM,
                       landmark_names=("Synthetic",),
                       expected_width=side, expected_height=side)
    return records, meta


def write_dataset(records, meta: DatasetMeta, root: str,
                  image_format: str = "png") -> None:
    """Write records to the standard corpus layout under ``root``."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    for ann in ("junior", "senior"):
        os.makedirs(os.path.join(root, "annotations", ann), exist_ok=True)
    for rec in records:
        stem = f"{rec.index:03d}"
        save_gray_image(rec.image(), os.path.join(root, "images",
                                                  f"{stem}.{image_format}"))
        for ann, labels in (("junior", rec.junior), ("senior", rec.senior)):
            path = os.path.join(root, "annotations", ann, stem + ".txt")
            with open(path, "w") as fh:
                for px, py in labels:
                    fh.write(f"{float(px)!r},{float(py)!r}\n")
    with open(os.path.join(root, "metadata.json"), "w") as fh:
        json.dump({
            "px_per_mm": meta.px_per_mm,
            "landmark_names": list(meta.landmark_names),
            "width": meta.expected_width,
            "height": meta.expected_height,
        }, fh, indent=2)
