"""Shared fixtures. The desk-scale run is expensive (~6 min) and session-
scoped: it trains the reference synthetic model once and serves every test
that needs a converged model."""

import time

import numpy as np
import pytest

from fovea.dataset import SyntheticConfig, gen_synthetic
from fovea.pyramid import build_pyramid
from fovea.trainer import TrainConfig, infer_trace, train

DESK_TRAIN_SEED = 100
DESK_TEST_SEED = 200
DESK_SIDE = 1024


@pytest.fixture(scope="session")
def desk_run():
    """64 train / 32 held-out images at side 1024, epochs (10, 10), seed 0.

    Returns the model, training log, per-image radial-error traces on the
    held-out set for iteration counts 0..10, and the wall time of the whole
    experiment (data generation + training + inference).
    """
    t0 = time.perf_counter()
    train_recs, _ = gen_synthetic(
        SyntheticConfig(side=DESK_SIDE, count=64, seed=DESK_TRAIN_SEED))
    test_recs, _ = gen_synthetic(
        SyntheticConfig(side=DESK_SIDE, count=32, seed=DESK_TEST_SEED))
    config = TrainConfig(epochs=(10, 10), seed=0)
    model, log = train(train_recs, config)

    traces = np.array([
        np.hypot(*(infer_trace(build_pyramid(rec.image()), model,
                               iterations=10) - rec.gt[0]).T)
        for rec in test_recs])  # [32, 11]: radial error after t iterations
    return {
        "model": model,
        "log": log,
        "config": config,
        "error_traces_px": traces,
        "wall_s": time.perf_counter() - t0,
    }
