"""Named configurations.

``desk`` is the desk-scale setup used for the synthetic five-shape
experiments: a wide kNN kernel (k=48 at 512 points) whose size follows the
point count, and training with random point-subset variants so the model
sees several sampling densities.
"""

from __future__ import annotations

from .model import ModelConfig
from .training import TrainConfig

__all__ = ["PRESETS", "preset"]

PRESETS = {
    "default": ({}, {}),
    "desk": (
        {"graph_k": 48, "k_reference_points": 512, "raw_scaling": "dataset"},
        {"epochs": 30, "subsample_variants": 3, "subsample_min_fraction": 0.4},
    ),
}


def preset(name: str, n_classes: int = 5, input_mode: str = "ti_features", **overrides) -> tuple:
    """``(ModelConfig, TrainConfig)`` for a named preset; ``overrides`` go to either config."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    model_kw, train_kw = dict(PRESETS[name][0]), dict(PRESETS[name][1])
    model_fields = ModelConfig.__dataclass_fields__
    for key, value in overrides.items():
        (model_kw if key in model_fields else train_kw)[key] = value
    return ModelConfig(n_classes=n_classes, input_mode=input_mode, **model_kw), TrainConfig(**train_kw)
