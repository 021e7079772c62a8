"""Mini-batch training with momentum SGD, and rotation-protocol evaluation."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError, NumericalError
from .model import Geometry, TINet, _parse_flat, class_weights, prepare, softmax_cross_entropy
from .pointcloud import load_dataset, random_rotation
from .rng import make_rng

__all__ = [
    "TrainConfig",
    "EpochMetrics",
    "EvalReport",
    "train",
    "train_manifest",
    "evaluate",
    "evaluate_manifest",
    "metrics_csv",
]

logger = logging.getLogger(__name__)

ROTATION_MODES = ("none", "z", "so3")


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 40
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    class_weighting: bool = True
    rotation: str = "z"
    subsample_variants: int = 0
    subsample_min_fraction: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.rotation not in ROTATION_MODES:
            raise ValueError(f"rotation must be one of {ROTATION_MODES}")
        if self.subsample_variants < 0 or not 0 < self.subsample_min_fraction <= 1:
            raise ValueError("invalid subsampling augmentation settings")

    def to_flat(self) -> dict:
        return {f.name: _fmt(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        return cls(**_parse_flat(cls, flat))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    predictions: np.ndarray

    def to_csv(self) -> str:
        lines = ["class,accuracy"]
        lines += [f"{c},{a:.6f}" for c, a in enumerate(self.per_class)]
        lines.append(f"overall,{self.accuracy:.6f}")
        lines.append("")
        lines.append("true\\pred," + ",".join(str(c) for c in range(self.confusion.shape[0])))
        lines += [f"{r}," + ",".join(str(v) for v in row) for r, row in enumerate(self.confusion)]
        return "\n".join(lines) + "\n"


def _rotation(mode: str, seed: int, *stream: int) -> np.ndarray:
    mode = {"none": "none", "z": "azimuthal_z", "so3": "uniform_so3"}[mode]
    return random_rotation(make_rng(seed, *stream), mode).rotation


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("empty dataset")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError(f"labels must lie in [0, {n_classes}), got max {labels.max()}")
    return labels


def _subsample(cloud, min_fraction, rng):
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
    n = pts.shape[0]
    lo = max(2, int(np.ceil(min_fraction * n)))
    size = lo + int(rng.random() * (n - lo + 1))
    keep = np.sort(np.argsort(rng.random(n), kind="stable")[: min(size, n)])
    return pts[keep]


def _accuracy_and_loss(model: TINet, geoms, labels, weights):
    loss, correct = 0.0, 0
    for g, y in zip(geoms, labels):
        logits = model.predict_logits(g)
        loss += softmax_cross_entropy(logits, int(y), float(weights[int(y)]))[0]
        correct += int(np.argmax(logits) == y)
    n = len(geoms)
    return loss / n + model.l2_penalty(), correct / n


def train(
    model: TINet,
    clouds: Sequence,
    labels,
    config: TrainConfig,
    val: Optional[tuple] = None,
    geometries: Optional[list] = None,
) -> list:
    """Fit ``model`` in place and return one :class:`EpochMetrics` per epoch.

    Epoch 0 reports the untrained model (no dropout). Each later epoch
    shuffles with stream ``(seed, 2, epoch)``, rotates every training cloud
    by ``config.rotation`` with stream ``(seed, 3, epoch, i)`` and draws
    dropout masks from ``(seed, 4, epoch)``. ``val`` is an optional
    ``(clouds, labels)`` pair scored with the same rotation mode.
    ``geometries`` may pass precomputed :func:`prepare` results for ``clouds``.

    With ``subsample_variants = V > 0`` every cloud also gets V random
    subsets (size uniform in ``[subsample_min_fraction * N, N]``, stream
    ``(seed, 6, i, v)``), prepared once; each epoch draws one of the V + 1
    versions per cloud from stream ``(seed, 8, epoch)``.
    """
    cfg = model.config
    labels = _check_labels(labels, cfg.n_classes)
    if len(clouds) != labels.shape[0]:
        raise DataError("clouds and labels differ in length")
    geoms = geometries if geometries is not None else [prepare(c, cfg) for c in clouds]
    if getattr(model, "epoch", 0) == 0:
        model.fit_raw_scale(geoms)
    variants = [[g] for g in geoms]
    for i, c in enumerate(clouds):
        for v in range(config.subsample_variants):
            sub = _subsample(c, config.subsample_min_fraction, make_rng(config.seed, 6, i, v))
            variants[i].append(prepare(sub, cfg))
    weights = class_weights(labels, cfg.n_classes) if config.class_weighting else np.ones(cfg.n_classes)
    val_geoms = val_labels = None
    if val is not None:
        val_labels = _check_labels(val[1], cfg.n_classes)
        val_geoms = [
            prepare(c, cfg).rotated(_rotation(config.rotation, config.seed, 5, i)) for i, c in enumerate(val[0])
        ]

    def val_acc():
        if val_geoms is None:
            return float("nan")
        return _accuracy_and_loss(model, val_geoms, val_labels, np.ones(cfg.n_classes))[1]

    loss0, acc0 = _accuracy_and_loss(model, geoms, labels, weights)
    history = [EpochMetrics(0, loss0, acc0, val_acc())]
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    n = len(geoms)
    rotate = cfg.input_mode == "raw_coordinates" and config.rotation != "none"
    for epoch in range(1, config.epochs + 1):
        order = make_rng(config.seed, 2, epoch).permutation(n)
        drop_rng = make_rng(config.seed, 4, epoch)
        pick = make_rng(config.seed, 8, epoch).integers(0, config.subsample_variants + 1, n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [variants[i][pick[i]] for i in idx]
            if rotate:
                batch = [g.rotated(_rotation(config.rotation, config.seed, 3, epoch, int(i))) for g, i in zip(batch, idx)]
            loss, grads, logits = model.loss_and_grads(batch, labels[idx], weights, train=True, rng=drop_rng)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            for k, g in grads.items():
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * g
                model.params[k] = model.params[k] + velocity[k]
        history.append(EpochMetrics(epoch, total_loss / n, correct / n, val_acc()))
        logger.info("epoch %d loss %.5f acc %.4f val %.4f", *dataclasses.astuple(history[-1]))
    model.epoch += config.epochs
    return history


def train_manifest(model: TINet, manifest, config: TrainConfig, val_manifest=None) -> list:
    clouds, labels = load_dataset(manifest)
    val = load_dataset(val_manifest) if val_manifest is not None else None
    return train(model, clouds, labels, config, val=val)


def evaluate(model: TINet, clouds: Sequence, labels, rotation: str = "none", seed: int = 0) -> EvalReport:
    """Accuracy under a rotation protocol.

    Test cloud ``i`` is rotated with stream ``(seed, 11, i)`` before the full
    pipeline (normalization, graphs, features) runs on it.
    """
    if rotation not in ROTATION_MODES:
        raise ValueError(f"rotation must be one of {ROTATION_MODES}")
    C = model.config.n_classes
    labels = _check_labels(labels, C)
    preds = np.empty(labels.shape[0], dtype=np.int64)
    for i, cloud in enumerate(clouds):
        R = _rotation(rotation, seed, 11, i)
        pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
        if rotation != "none":
            pts = pts @ R.T
        preds[i] = int(np.argmax(model.predict_logits(prepare(pts, model.config))))
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    support = confusion.sum(axis=1)
    per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    return EvalReport(float((preds == labels).mean()), per_class, confusion, preds)


def evaluate_manifest(model: TINet, manifest, rotation: str = "none", seed: int = 0) -> EvalReport:
    clouds, labels = load_dataset(manifest)
    return evaluate(model, clouds, labels, rotation, seed)


def metrics_csv(history: Sequence[EpochMetrics]) -> str:
    """``epoch,train_loss,train_acc,val_acc`` with 17 significant digits."""
    lines = ["epoch,train_loss,train_acc,val_acc"]
    lines += ["%d,%.17g,%.17g,%.17g" % (m.epoch, m.train_loss, m.train_acc, m.val_acc) for m in history]
    return "\n".join(lines) + "\n"
