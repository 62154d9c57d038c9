"""Intrinsic decomposition I = R*S + N with per-source heteroscedastic uncertainty,
plus a split-leakage audit harness."""

from .core import DatasetManifest, EvalReport, FrameRecord, IntrinsicTriple, as_image, validate_triple
from .networks import ModelSpec, build_model, count_parameters
from .objectives import LossConfig
from .splits import SplitSpec, split
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest",
    "EvalReport",
    "FrameRecord",
    "IntrinsicTriple",
    "LossConfig",
    "ModelSpec",
    "SplitSpec",
    "TrainConfig",
    "as_image",
    "build_model",
    "count_parameters",
    "split",
    "train",
    "validate_triple",
]
