"""Graph coarsening driven by contour variance, local max pooling, graph rebuilds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .graph import SparseGraph, knn_graph
from .rng import as_rng
from .ti_encoder import TiRawFeatures

__all__ = [
    "PoolingPlan",
    "ti_score",
    "coarsen",
    "pool_features",
    "pool_backward",
    "rebuild_graph",
    "uniform_sample",
    "farthest_point_sample",
]


@dataclass(frozen=True, eq=False)
class PoolingPlan:
    """``kept`` parent indices and, per kept point, its ``m`` nearest parents.

    ``clusters[r, 0] == kept[r]``; remaining columns follow by distance.
    """

    kept: np.ndarray
    clusters: np.ndarray
    n_parent: int

    @property
    def m(self) -> int:
        return self.clusters.shape[1]

    @property
    def n_kept(self) -> int:
        return self.kept.shape[0]

    @classmethod
    def identity(cls, n: int) -> "PoolingPlan":
        idx = np.arange(n)
        return cls(idx, idx[:, None].copy(), n)


def ti_score(raw, method: str = "contour1") -> np.ndarray:
    """Per-point coarsening score.

    ``contour1`` is the first-order contour variance (the first raw
    column); ``l2`` is the Euclidean norm over every raw channel.
    """
    if isinstance(raw, TiRawFeatures):
        contour, full = raw.contour, raw.matrix
    else:
        full = np.asarray(raw, dtype=np.float64)
        contour = full
    if method == "contour1":
        return contour[:, 0].copy()
    if method == "l2":
        return np.sqrt(np.einsum("ij,ij->i", full, full))
    raise ValueError(f"unknown score method {method!r}")


def top_indices(scores, n_keep: int) -> np.ndarray:
    """Indices of the ``n_keep`` largest scores, descending, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.shape[0]), -scores))[:n_keep]


def coarsen(points, scores, n_keep: int, m: int = 8, method: str = "contour1") -> PoolingPlan:
    """Keep the ``n_keep`` highest-scoring points and gather each one's ``m``-NN cluster.

    ``scores`` is either a score vector or :class:`TiRawFeatures` (scored with
    ``method``). Clusters are found in the coordinate space of ``points``,
    with the kept point itself always first.
    """
    P = np.asarray(points, dtype=np.float64)
    n = P.shape[0]
    s = ti_score(scores, method) if isinstance(scores, TiRawFeatures) else np.asarray(scores, dtype=np.float64)
    if s.shape != (n,):
        raise DataError(f"expected {n} scores, got shape {s.shape}")
    if not 1 <= n_keep <= n:
        raise ValueError(f"n_keep must lie in [1, {n}], got {n_keep}")
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in [1, {n}], got {m}")
    kept = top_indices(s, n_keep)
    diff = P[kept][:, None, :] - P[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    d[np.arange(n_keep), kept] = -1.0
    order = np.lexsort((np.broadcast_to(np.arange(n), d.shape), d), axis=1)
    return PoolingPlan(kept, order[:, :m].copy(), n)


def pool_features(plan: PoolingPlan, X, return_argmax: bool = False):
    """Channel-wise max of ``X`` over every cluster.

    With ``return_argmax`` the parent row achieving each max is returned as
    well (ties go to the lowest parent index).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != plan.n_parent:
        raise DataError(f"plan expects {plan.n_parent} parent rows, got {X.shape[0]}")
    members = np.sort(plan.clusters, axis=1)
    vals = X[members]
    pos = vals.argmax(axis=1)
    out = np.take_along_axis(vals, pos[:, None, :], axis=1)[:, 0, :]
    if return_argmax:
        return out, np.take_along_axis(members, pos, axis=1)
    return out


def pool_backward(plan: PoolingPlan, argmax, upstream, n_channels: int | None = None) -> np.ndarray:
    """Route each upstream entry to the parent (row, channel) that won the max."""
    if argmax is None:
        raise ValueError("pool_backward needs the argmax table from pool_features(..., return_argmax=True)")
    U = np.asarray(upstream, dtype=np.float64)
    if U.shape != argmax.shape:
        raise DataError(f"upstream shape {U.shape} != pooled shape {argmax.shape}")
    F = U.shape[1] if n_channels is None else n_channels
    grad = np.zeros((plan.n_parent, F))
    cols = np.broadcast_to(np.arange(F), U.shape)
    np.add.at(grad, (argmax, cols), U)
    return grad


def rebuild_graph(rows, k: int, space: str = "coordinates") -> SparseGraph:
    """kNN graph over the rows of the next resolution.

    ``rows`` are the kept points' coordinates (``space="coordinates"``) or
    their feature vectors (``space="features"``); the construction is the
    same, only the metric space differs.
    """
    if space not in ("coordinates", "features"):
        raise ValueError(f"unknown space {space!r}")
    return knn_graph(np.asarray(rows, dtype=np.float64), k)


def uniform_sample(n: int, n_keep: int, seed) -> np.ndarray:
    """Reference sampler: ``n_keep`` distinct indices uniformly at random, sorted."""
    rng = as_rng(seed)
    keys = rng.random(n)
    return np.sort(np.argsort(keys, kind="stable")[:n_keep])


def farthest_point_sample(points, n_keep: int, start: int = 0) -> np.ndarray:
    """Reference sampler: greedy farthest point sampling from ``start``."""
    P = np.asarray(points, dtype=np.float64)
    n = P.shape[0]
    if not 1 <= n_keep <= n:
        raise ValueError(f"n_keep must lie in [1, {n}]")
    chosen = np.empty(n_keep, dtype=np.int64)
    chosen[0] = start
    dist = ((P - P[start]) ** 2).sum(axis=1)
    for i in range(1, n_keep):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, ((P - P[nxt]) ** 2).sum(axis=1))
    return chosen
