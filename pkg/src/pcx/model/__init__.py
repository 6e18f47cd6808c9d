"""Classifier abstraction, the built-in point network, synthetic data and training."""

from .external import external_classifier
from .handle import ClassifierHandle, from_params, scores
from .network import (
    TinyPointNetParams,
    fingerprint,
    forward,
    forward_batch,
    gradient,
    init_params,
    load_model,
    save_model,
)
from .synth import SHAPES, SyntheticShapeSpec, synth_dataset
from .train import EpochLog, TrainResult, train

__all__ = [
    "ClassifierHandle",
    "EpochLog",
    "SHAPES",
    "SyntheticShapeSpec",
    "TinyPointNetParams",
    "TrainResult",
    "external_classifier",
    "fingerprint",
    "forward",
    "forward_batch",
    "from_params",
    "gradient",
    "init_params",
    "load_model",
    "save_model",
    "scores",
    "synth_dataset",
    "train",
]
