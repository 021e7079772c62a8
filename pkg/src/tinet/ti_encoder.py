"""Transform-invariant point features: contour variance and direction variance.

For a random-walk Laplacian ``L`` built from pairwise distances and a
recentered coordinate signal ``X``, the row norms ``||(L^i X)_r||^2`` do not
change when ``X`` is replaced by ``X R`` for any orthogonal ``R``. The same
holds for the per-point unit directions of ``L X``, which rotate with ``R``
and are therefore filtered the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .graph import Laplacian, knn_graph, laplacian, shift_apply

__all__ = [
    "TiRawFeatures",
    "TiLayerParams",
    "ZERO_DIRECTION_EPS",
    "contour_variance",
    "direction_signal",
    "direction_variance",
    "raw_features",
    "encode",
    "ti_layer_forward",
    "ti_layer_backward",
]

ZERO_DIRECTION_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class TiRawFeatures:
    contour: np.ndarray
    direction: np.ndarray
    ndir: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Contour columns followed by direction columns (N x 2K)."""
        return np.hstack([self.contour, self.direction])

    @property
    def n_points(self) -> int:
        return self.contour.shape[0]


@dataclass(eq=False)
class TiLayerParams:
    theta: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.theta.ndim != 2 or self.bias.shape != (self.theta.shape[1],):
            raise DataError(f"theta {self.theta.shape} and bias {self.bias.shape} disagree")


def _iterated_row_norms(L, S, K, include_order0):
    cols = []
    if include_order0:
        cols.append(np.einsum("ij,ij->i", S, S))
    T = S
    for _ in range(K):
        T = shift_apply(L, T)
        cols.append(np.einsum("ij,ij->i", T, T))
    return np.column_stack(cols) if cols else np.zeros((S.shape[0], 0))


def contour_variance(L: Laplacian, X, K: int, include_order0: bool = False) -> np.ndarray:
    """Column ``i-1`` holds ``||(L^i X)_r||^2`` for ``i = 1..K`` (iterated sparse applies).

    With ``include_order0`` an extra leading column ``||X_r||^2`` is added.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    return _iterated_row_norms(L, X, K, include_order0)


def direction_signal(L: Laplacian, X, eps: float = ZERO_DIRECTION_EPS) -> np.ndarray:
    """Unit rows of ``L X``; rows with norm <= ``eps`` become exactly zero."""
    T = shift_apply(L, X)
    norms = np.sqrt(np.einsum("ij,ij->i", T, T))
    out = np.zeros_like(T)
    ok = norms > eps
    out[ok] = T[ok] / norms[ok, None]
    return out


def direction_variance(L: Laplacian, ndir, K: int, include_order0: bool = False) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be >= 1")
    return _iterated_row_norms(L, np.asarray(ndir, dtype=np.float64), K, include_order0)


def raw_features(L: Laplacian, X, K: int, include_order0: bool = False) -> TiRawFeatures:
    ndir = direction_signal(L, X)
    return TiRawFeatures(
        contour_variance(L, X, K, include_order0),
        direction_variance(L, ndir, K, include_order0),
        ndir,
    )


def encode(points, k: int = 16, K: int = 3, include_order0: bool = False):
    """Recenter ``points``, build the kNN graph and return ``(raw, L_rw)``."""
    X = np.asarray(points, dtype=np.float64)
    X = X - X.mean(axis=0)
    L = laplacian(knn_graph(X, k), "random_walk")
    return raw_features(L, X, K, include_order0), L


def _raw_matrix(raw) -> np.ndarray:
    return raw.matrix if isinstance(raw, TiRawFeatures) else np.asarray(raw, dtype=np.float64)


def ti_layer_forward(raw, params: TiLayerParams) -> np.ndarray:
    """Linear map of the concatenated raw channels: ``[contour | direction] @ theta + bias``."""
    F = _raw_matrix(raw)
    if F.shape[1] != params.theta.shape[0]:
        raise DataError(f"raw features have {F.shape[1]} channels, theta expects {params.theta.shape[0]}")
    return F @ params.theta + params.bias


def ti_layer_backward(raw, params: TiLayerParams, upstream) -> tuple:
    """Gradients ``(d_theta, d_bias)``; raw features carry no trainable inputs."""
    F = _raw_matrix(raw)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (F.shape[0], params.theta.shape[1]):
        raise DataError(f"upstream gradient has shape {upstream.shape}, expected {(F.shape[0], params.theta.shape[1])}")
    return F.T @ upstream, upstream.sum(axis=0)
