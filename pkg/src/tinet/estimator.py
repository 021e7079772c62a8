"""scikit-learn style wrappers around the encoder and the classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .model import ModelConfig, TINet, prepare
from .ti_encoder import encode
from .training import TrainConfig, evaluate, train
from .validation import check_clouds, check_labels

__all__ = ["TIFeatureEncoder", "TINetClassifier"]


class TIFeatureEncoder(TransformerMixin, BaseEstimator):
    """Per-point contour and direction variance features (N x 2K per cloud).

    Stateless: ``fit`` only validates. ``transform`` returns a 3-d array when
    given one, otherwise a list of per-cloud matrices.
    """

    def __init__(self, k=16, order=3, include_order0=False, l2_normalize=False):
        self.k = k
        self.order = order
        self.include_order0 = include_order0
        self.l2_normalize = l2_normalize

    def fit(self, X, y=None):
        check_clouds(X)
        self.n_features_out_ = 2 * (self.order + int(self.include_order0))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        clouds = check_clouds(X)
        out = []
        for pts in clouds:
            F = encode(pts, self.k, self.order, self.include_order0)[0].matrix
            if self.l2_normalize:
                norm = np.linalg.norm(F)
                F = F / norm if norm > 0 else F
            out.append(F)
        if isinstance(X, np.ndarray) and X.ndim == 3:
            return np.stack(out)
        return out


class TINetClassifier(ClassifierMixin, BaseEstimator):
    """Point cloud classifier built on transform-invariant graph features.

    ``X`` is a sequence of N_i x 3 clouds (or a (n_samples, N, 3) array);
    ``y`` holds arbitrary class labels. Architecture parameters mirror
    :class:`tinet.model.ModelConfig`, training ones
    :class:`tinet.training.TrainConfig`.
    """

    def __init__(
        self,
        input_mode="ti_features",
        graph_k=16,
        k_reference_points=0,
        ti_order=3,
        ti_channels=32,
        include_order0=False,
        raw_scaling="dataset",
        gcn_widths=(64, 128),
        cheb_orders=(3, 3),
        scalar_theta=False,
        pool_after=(0,),
        pool_ratio=0.25,
        pool_m=8,
        pool_k=16,
        pool_score="contour1",
        dense_widths=(256, 64),
        keep_prob=0.7,
        l2=1e-4,
        batch_size=16,
        epochs=40,
        learning_rate=0.01,
        momentum=0.9,
        class_weighting=True,
        rotation="z",
        subsample_variants=0,
        subsample_min_fraction=0.5,
        random_state=0,
    ):
        self.input_mode = input_mode
        self.graph_k = graph_k
        self.k_reference_points = k_reference_points
        self.ti_order = ti_order
        self.ti_channels = ti_channels
        self.include_order0 = include_order0
        self.raw_scaling = raw_scaling
        self.gcn_widths = gcn_widths
        self.cheb_orders = cheb_orders
        self.scalar_theta = scalar_theta
        self.pool_after = pool_after
        self.pool_ratio = pool_ratio
        self.pool_m = pool_m
        self.pool_k = pool_k
        self.pool_score = pool_score
        self.dense_widths = dense_widths
        self.keep_prob = keep_prob
        self.l2 = l2
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.class_weighting = class_weighting
        self.rotation = rotation
        self.subsample_variants = subsample_variants
        self.subsample_min_fraction = subsample_min_fraction
        self.random_state = random_state

    def _model_config(self, n_classes) -> ModelConfig:
        names = ModelConfig.__dataclass_fields__.keys() - {"n_classes"}
        return ModelConfig(n_classes=n_classes, **{k: getattr(self, k) for k in names})

    def _train_config(self) -> TrainConfig:
        names = TrainConfig.__dataclass_fields__.keys() - {"seed"}
        return TrainConfig(seed=self.random_state, **{k: getattr(self, k) for k in names})

    def fit(self, X, y):
        clouds = check_clouds(X)
        y = check_labels(y, len(clouds))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least 2 classes to fit a classifier")
        self.model_ = TINet(self._model_config(self.classes_.shape[0]), seed=self.random_state)
        self.history_ = train(self.model_, clouds, encoded, self._train_config())
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return np.stack([self.model_.predict_logits(prepare(p, self.model_.config)) for p in check_clouds(X)])

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def descriptors(self, X) -> np.ndarray:
        """Global max-pooled descriptor of every cloud."""
        check_is_fitted(self, "model_")
        return np.stack([self.model_.forward(prepare(p, self.model_.config))[1] for p in check_clouds(X)])

    def rotation_score(self, X, y, rotation="so3", seed=0) -> float:
        """Accuracy after rotating every test cloud by the given protocol."""
        check_is_fitted(self, "model_")
        clouds = check_clouds(X)
        y = check_labels(y, len(clouds))
        encoded = np.searchsorted(self.classes_, y)
        return evaluate(self.model_, clouds, encoded, rotation, seed).accuracy

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(self.model_, path)

    @classmethod
    def load(cls, path, classes=None) -> "TINetClassifier":
        """Rebuild a fitted estimator from a checkpoint (labels default to 0..C-1)."""
        model = load_checkpoint(path)
        est = cls(random_state=model.seed, **{k: v for k, v in vars(model.config).items() if k != "n_classes"})
        est.model_ = model
        est.classes_ = np.arange(model.config.n_classes) if classes is None else np.asarray(classes)
        return est
