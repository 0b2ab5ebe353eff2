#!/usr/bin/env python3
"""Walk through the two sampling stages: pyramid construction and glimpse
extraction.

A 2400x1935 frame collapses into a 6-level Gaussian pyramid; a glimpse at
any focal point then reads one 64x64 patch per level, so a refinement
iteration touches 6*4096 = 24576 pixels instead of 4.6 million. The patch
pixel footprint is constant per level while the field of view doubles, which
is the whole trick: fine detail where the estimate is, coarse context
everywhere else.

Run: python3 demos/pyramid_and_glimpse.py [--out demos/out]
"""

import argparse
from pathlib import Path

import numpy as np

from fovea.dataset import SyntheticConfig, render_synthetic
from fovea.glimpse import GlimpseTransform, extract_glimpse
from fovea.pyramid import build_pyramid, num_levels, save_gray_image


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="demos/out")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    print("A full-size 2400 x 1935 cephalogram needs "
          f"{num_levels(2400, 1935)} levels.")

    # A renderable stand-in: synthetic image with a known landmark.
    cfg = SyntheticConfig(side=1024, count=1, seed=4)
    rng = np.random.default_rng(cfg.seed)
    landmark = np.array([600.0, 420.0])
    image = render_synthetic(cfg.side, landmark, [(150.0, 800.0)], cfg, rng)
    print(f"\nSynthetic frame {image.shape[1]} x {image.shape[0]}, "
          f"landmark at ({landmark[0]:.1f}, {landmark[1]:.1f}).")

    pyramid = build_pyramid(image)
    total = sum(lv.size for lv in pyramid.levels)
    print(f"Pyramid: {pyramid.n} levels, {total} px total "
          f"({total / image.size:.3f} x the source; geometric series -> 4/3).")
    for i, level in enumerate(pyramid.levels, start=1):
        save_gray_image(level, out / f"level_{i}.png")
        print(f"  level {i}: {level.shape[1]:>5} x {level.shape[0]:<5} "
              f"-> level_{i}.png")

    glimpse = extract_glimpse(pyramid, landmark)
    print(f"\nGlimpse at the landmark: {glimpse.patches.shape[0]} patches of "
          f"64 x 64 = {glimpse.patches.size} px sampled "
          f"({glimpse.patches.size / image.size:.4f} x the frame).")
    for i, patch in enumerate(glimpse.patches, start=1):
        save_gray_image(patch, out / f"patch_{i}.png")
        print(f"  patch {i}: field of view {64 * 2 ** (i - 1):>4} px wide "
              f"-> patch_{i}.png")

    rot = extract_glimpse(pyramid, landmark,
                          GlimpseTransform(theta=np.deg2rad(15), scale=1.05))
    save_gray_image(rot.patches[0], out / "patch_1_augmented.png")
    print("\nThe same glimpse under a 15 degree / 1.05x training augmentation "
          "-> patch_1_augmented.png")


if __name__ == "__main__":
    main()
