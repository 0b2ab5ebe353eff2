"""Foveated glimpse-pyramid landmark regression.

A small numpy library that locates anatomical landmarks in large images by
repeatedly looking at a stack of fixed-size glimpses centered on the current
estimate and regressing a correction. Per-iteration cost is governed by the
glimpse stack, not the image, so it grows logarithmically with image side
length.
"""

from fovea.dataset import SyntheticConfig, gen_synthetic, load_isbi
from fovea.glimpse import GlimpseTransform, extract_glimpse
from fovea.metrics import EvalReport, iov, mre, radial_errors, sdr
from fovea.model import load_params, make_model, save_params
from fovea.pyramid import build_pyramid, num_levels
from fovea.spatialize import spatialize
from fovea.tensor import (
    AdamState,
    NonFiniteError,
    ShapeError,
    Tensor,
    adam_step,
    grad_check,
)
from fovea.trainer import TrainConfig, infer, infer_trace, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "EvalReport",
    "GlimpseTransform",
    "NonFiniteError",
    "ShapeError",
    "SyntheticConfig",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "build_pyramid",
    "extract_glimpse",
    "gen_synthetic",
    "grad_check",
    "infer",
    "infer_trace",
    "iov",
    "load_isbi",
    "load_params",
    "make_model",
    "mre",
    "num_levels",
    "radial_errors",
    "save_params",
    "sdr",
    "spatialize",
    "train",
    "__version__",
]
