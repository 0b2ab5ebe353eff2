#!/usr/bin/env python3
"""Produce the standard evaluation table for a trained model.

Metrics follow the cephalometric-benchmark conventions: mean radial error
(MRE) with its standard deviation, successful detection rates (SDR) at the
2 / 2.5 / 3 / 4 mm thresholds, and inter-observer variability (IOV, half the
mean distance between the two annotators) as the human-noise reference
column. The demo trains a quick model on synthetic data, evaluates at two
iteration budgets, and prints both tables plus their MRE delta.

Run: python3 demos/evaluation_report.py [--out demos/out]
     (about a minute)
"""

import argparse
from pathlib import Path

import numpy as np

from fovea.dataset import SyntheticConfig, gen_synthetic
from fovea.metrics import EvalReport, iov, radial_errors
from fovea.pyramid import build_pyramid
from fovea.trainer import TrainConfig, infer, train


def evaluate(records, meta, model, iterations):
    report = EvalReport()
    preds = np.array([infer(build_pyramid(r.image()), model,
                            iterations=iterations) for r in records])
    truths = np.array([r.gt[0] for r in records])
    report.add_landmark(
        name=meta.landmark_names[0],
        errors_mm=radial_errors(preds, truths, meta.px_per_mm),
        iov_mm=iov(np.array([r.junior[0] for r in records]),
                   np.array([r.senior[0] for r in records]), meta.px_per_mm))
    return report


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="demos/out")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train_recs, meta = gen_synthetic(SyntheticConfig(side=512, count=24, seed=10))
    test_recs, _ = gen_synthetic(SyntheticConfig(side=512, count=12, seed=30))
    model, _ = train(train_recs, TrainConfig(epochs=(3, 1), seed=0),
                     landmark_name="Synthetic", px_per_mm=meta.px_per_mm)
    print("Trained on 24 images; evaluating 12 held-out images "
          f"(1 mm = {meta.px_per_mm:g} px on this set).\n")

    reports = {}
    for iterations in (3, 10):
        reports[iterations] = evaluate(test_recs, meta, model, iterations)
        print(f"T_infer = {iterations}:")
        print(reports[iterations].to_text())
        (out / f"demo_report_T{iterations}.json").write_text(
            reports[iterations].to_json())

    delta = reports[10].average["mre"] - reports[3].average["mre"]
    print(f"Extra iterations changed MRE by {delta:+.4f} mm.")
    if abs(delta) < 0.05:
        print("Every image had already converged by t = 3; the remaining "
              "iterations idle rather than drift.")
    else:
        print("On this quick 4-epoch model the slowest starts are still "
              "converging at t = 3; a longer schedule pulls the two budgets "
              "within a few hundredths of a millimeter.")
    print("IOV on this synthetic set is 0.00 mm because both simulated "
          "annotators are given the exact truth.")
    print(f"\nJSON reports -> {out}/demo_report_T3.json, demo_report_T10.json")


if __name__ == "__main__":
    main()
