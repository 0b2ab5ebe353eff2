"""Scaling benchmark: per-iteration refinement cost versus image side length.

One refinement iteration touches only the glimpse (N patches of 64x64 where
N grows with log2 of the side), never the full frame, so its cost is flat in
the pixel count and logarithmic in the side length. The benchmark measures
that directly: for each side it builds a pyramid once, times repeated
refinement passes at random focal points, and fits wall time against
log2(side). Pyramid construction is linear in pixels and amortized once per
image, so it is timed and reported separately.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from fovea.glimpse import extract_glimpse, random_transform
from fovea.model import make_model
from fovea.pyramid import PATCH_SIZE, build_pyramid, num_levels
from fovea.trainer import refine_once

DEFAULT_SIDES = (256, 512, 1024, 2048, 4096)


@dataclass
class SideResult:
    side: int
    levels: int
    glimpse_pixels: int          # measured from the extracted patches
    per_iteration_s: float       # median over timed refinement passes
    per_iteration_mean_s: float
    pyramid_build_s: float
    buffer_bytes: int            # pyramid levels + one glimpse, resident
    error: str | None = None


@dataclass
class ScalingReport:
    rows: list = field(default_factory=list)
    iterations: int = 0
    preset: str = "tiny"
    fit_intercept: float = 0.0   # t ~ fit_intercept + fit_slope * log2(side)
    fit_slope: float = 0.0
    fit_r2: float = 0.0

    def ok_rows(self):
        return [r for r in self.rows if r.error is None]

    def to_json(self) -> str:
        payload = {
            "iterations": self.iterations,
            "preset": self.preset,
            "fit": {"intercept_s": self.fit_intercept,
                    "slope_s_per_doubling": self.fit_slope,
                    "r2": self.fit_r2},
            "sides": [vars(r) for r in self.rows],
        }
        return json.dumps(payload, indent=2)

    def to_text(self) -> str:
        lines = [
            f"{'side':>6} {'N':>3} {'pixels':>8} {'iter (ms)':>10} "
            f"{'pyramid (ms)':>13} {'buffers (MB)':>13}",
        ]
        for r in self.rows:
            if r.error is not None:
                lines.append(f"{r.side:>6} failed: {r.error}")
                continue
            lines.append(
                f"{r.side:>6} {r.levels:>3} {r.glimpse_pixels:>8} "
                f"{r.per_iteration_s * 1e3:>10.3f} "
                f"{r.pyramid_build_s * 1e3:>13.1f} "
                f"{r.buffer_bytes / 1e6:>13.2f}")
        ok = self.ok_rows()
        if len(ok) >= 2:
            lines.append(
                f"fit: t = {self.fit_intercept * 1e3:.3f} ms "
                f"+ {self.fit_slope * 1e3:.3f} ms * log2(side), "
                f"R^2 = {self.fit_r2:.3f}")
            lines.append(
                f"ratio t({ok[-1].side}) / t({ok[0].side}) = "
                f"{ok[-1].per_iteration_s / ok[0].per_iteration_s:.2f}")
        return "\n".join(lines)


def _fit_log2(report: ScalingReport) -> None:
    """Least-squares t = a + b*log2(side) over the successful rows."""
    ok = report.ok_rows()
    if len(ok) < 2:
        return
    x = np.log2([r.side for r in ok])
    y = np.array([r.per_iteration_s for r in ok])
    coeffs = np.polyfit(x, y, 1)
    pred = np.polyval(coeffs, x)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    report.fit_slope = float(coeffs[0])
    report.fit_intercept = float(coeffs[1])
    report.fit_r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def bench_side(side: int, iterations: int, preset: str,
               rng: np.random.Generator) -> SideResult:
    """Benchmark one side length; the image content is irrelevant to cost."""
    image = np.full((side, side), 0.5, dtype=np.float32)

    t0 = time.perf_counter()
    pyramid = build_pyramid(image)
    pyramid_build_s = time.perf_counter() - t0

    model = make_model(preset, pyramid.n, rng)
    center = (side / 2.0, side / 2.0)
    margin = side / 4.0

    # Warm-up pass; the glimpse pixel count is measured, not assumed.
    refine_once(pyramid, center, model)
    glimpse_pixels = int(extract_glimpse(pyramid, center).patches.size)
    buffer_bytes = sum(lv.nbytes for lv in pyramid.levels) + glimpse_pixels * 4

    samples = np.empty(iterations)
    for i in range(iterations):
        focal = (center[0] + rng.uniform(-margin, margin),
                 center[1] + rng.uniform(-margin, margin))
        transform = random_transform(rng, 15.0, 0.05)
        t0 = time.perf_counter()
        refine_once(pyramid, focal, model, transform)
        samples[i] = time.perf_counter() - t0

    return SideResult(
        side=side,
        levels=pyramid.n,
        glimpse_pixels=glimpse_pixels,
        per_iteration_s=float(np.median(samples)),
        per_iteration_mean_s=float(samples.mean()),
        pyramid_build_s=pyramid_build_s,
        buffer_bytes=buffer_bytes,
    )


def run_bench(sides=DEFAULT_SIDES, iterations: int = 100, preset: str = "tiny",
              seed: int = 0) -> ScalingReport:
    """Benchmark every side; a failure on one side does not stop the rest."""
    report = ScalingReport(iterations=iterations, preset=preset)
    for side in sides:
        if num_levels(side, side) < 1 or side < PATCH_SIZE:
            report.rows.append(SideResult(side, 0, 0, 0.0, 0.0, 0.0, 0,
                                          error="side smaller than one patch"))
            continue
        rng = np.random.default_rng([seed, side])
        try:
            report.rows.append(bench_side(side, iterations, preset, rng))
        except MemoryError as exc:
            report.rows.append(SideResult(side, 0, 0, 0.0, 0.0, 0.0, 0,
                                          error=f"allocation failure: {exc}"))
    _fit_log2(report)
    return report
