"""Depth from optical flow under sparse supervision.

A global-local hypernetwork (an encoder summarising the image pair and its
flow into six numbers that generate the filters of a small per-pixel
network), a parameter-matched encoder-decoder baseline, two-view linear
triangulation, synthetic two-view data and the evaluation protocol, all on
numpy with a small reverse-mode autodiff engine.
"""
from .errors import (
    ConfigurationError,
    DegenerateConfigurationError,
    DegenerateMotionError,
    EvaluationError,
    FormatError,
    PointAtInfinityError,
    SparseDepthError,
    TrainingDivergedError,
    UsageError,
)
from .estimator import GlobalLocalDepthEstimator, SmallEncDecDepthEstimator
from .geometry import linear_triangulate, triangulate_depth_map
from .losses import MetricsRecord, abs_inv, abs_rel, s_rmse
from .model import GlobalLocalModel, ModelConfig, SmallEncDec
from .scene import DataConfig, RenderedPair, make_pair
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DegenerateConfigurationError",
    "DegenerateMotionError",
    "EvaluationError",
    "FormatError",
    "PointAtInfinityError",
    "SparseDepthError",
    "TrainingDivergedError",
    "UsageError",
    "GlobalLocalDepthEstimator",
    "SmallEncDecDepthEstimator",
    "linear_triangulate",
    "triangulate_depth_map",
    "MetricsRecord",
    "abs_inv",
    "abs_rel",
    "s_rmse",
    "GlobalLocalModel",
    "ModelConfig",
    "SmallEncDec",
    "DataConfig",
    "RenderedPair",
    "make_pair",
    "TrainConfig",
    "evaluate",
    "train",
]
