"""Physics-aware attention LSTM autoencoder for early battery fault detection."""

from .data import FaultSpec, FleetConfig, TelemetryStream, WindowedSample, generate_fleet, inject_fault, make_windows
from .estimator import PhysicsAwareLSTMAE
from .evaluation import cross_validate, roc_auc
from .features import PhysicalFeatureAugmenter
from .model import ModelConfig
from .training import TrainConfig, compute_threshold, fit, fit_arrays

__all__ = [
    "FaultSpec",
    "FleetConfig",
    "ModelConfig",
    "PhysicalFeatureAugmenter",
    "PhysicsAwareLSTMAE",
    "TelemetryStream",
    "TrainConfig",
    "WindowedSample",
    "compute_threshold",
    "cross_validate",
    "fit",
    "fit_arrays",
    "generate_fleet",
    "inject_fault",
    "make_windows",
    "roc_auc",
]

__version__ = "0.1.0"
