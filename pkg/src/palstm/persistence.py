"""Versioned JSON model files.

Floats are written with ``repr`` (Python's shortest round-trip form), so a
save/load cycle restores every float64 bit for bit and identical models
serialize to identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .features import ChannelStats, CorrelationReport, PhysicalFeatureSpec
from .model import ModelConfig
from .numerics import ParameterStore
from .training import FitResult, ThresholdModel, TrainConfig

FORMAT = "palstm-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def to_json(fit: FitResult) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": fit.model_config.to_dict(),
        "train_config": fit.train_config.to_dict(),
        "stats": {"mean": _floats(fit.stats.mean), "std": _floats(fit.stats.std), "mileage_max": fit.stats.mileage_max},
        "spec": {"selected_channels": list(fit.spec.selected_channels), "epsilon": fit.spec.epsilon},
        "correlation": {
            "rho": _floats(fit.correlation.rho),
            "valid": [bool(v) for v in fit.correlation.valid],
            "names": list(fit.correlation.names),
        },
        "threshold": {
            "lambda": fit.threshold.lam,
            "q": fit.threshold.q,
            "training_scores": _floats(fit.threshold.training_scores),
        },
        "history": _floats(fit.history),
        "params": {name: {"shape": list(fit.params[name].shape), "values": _floats(fit.params[name])} for name in fit.params},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def from_json(text: str) -> FitResult:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if doc.get("format") != FORMAT:
        raise ModelFormatError(f"not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}; expected {VERSION}")
    try:
        params = ParameterStore(
            {name: np.array(e["values"], dtype=np.float64).reshape(e["shape"]) for name, e in doc["params"].items()}
        )
        st = doc["stats"]
        thr = doc["threshold"]
        corr = doc["correlation"]
        return FitResult(
            params=params,
            threshold=ThresholdModel(thr["lambda"], thr["q"], np.array(thr["training_scores"])),
            history=list(doc["history"]),
            stats=ChannelStats(np.array(st["mean"]), np.array(st["std"]), st["mileage_max"]),
            spec=PhysicalFeatureSpec(tuple(doc["spec"]["selected_channels"]), doc["spec"]["epsilon"]),
            correlation=CorrelationReport(np.array(corr["rho"]), np.array(corr["valid"], dtype=bool), tuple(corr["names"])),
            model_config=ModelConfig(**doc["model_config"]),
            train_config=TrainConfig(**doc["train_config"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None


def save_model(fit: FitResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(fit))


def load_model(path) -> FitResult:
    with open(path, encoding="utf-8") as fh:
        return from_json(fh.read())
