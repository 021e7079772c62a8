"""Weighted kNN graphs over points or features, and their normalized Laplacians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DataError, DegenerateCloudError, NumericalError

__all__ = [
    "KnnResult",
    "SparseGraph",
    "Laplacian",
    "knn",
    "build_graph",
    "knn_graph",
    "laplacian",
    "shift_apply",
    "format_edges",
]

_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True, eq=False)
class KnnResult:
    """Neighbor table ``indices`` (N x k) and squared distances ``sqdist`` (N x k).

    Rows are sorted by squared distance, ties by ascending neighbor index.
    """

    indices: np.ndarray
    sqdist: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Symmetric weighted adjacency in CSR layout."""

    weights: sp.csr_matrix
    degree: np.ndarray
    sigma: float

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class Laplacian:
    kind: str
    matrix: sp.csr_matrix
    graph: SparseGraph

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


def _pairwise_sqdist(block: np.ndarray, X: np.ndarray) -> np.ndarray:
    diff = block[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn(X, k: int) -> KnnResult:
    """Exact k nearest neighbors by squared Euclidean distance.

    Brute force in row chunks. A point is never its own neighbor; equal
    distances are ordered by ascending index, which makes the result a pure
    function of ``X``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DataError(f"knn expects an N x D matrix, got shape {X.shape}")
    n = X.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    indices = np.empty((n, k), dtype=np.int64)
    sqdist = np.empty((n, k))
    rows_per_chunk = max(1, _CHUNK_ELEMS // max(1, n * X.shape[1]))
    for start in range(0, n, rows_per_chunk):
        stop = min(n, start + rows_per_chunk)
        d = _pairwise_sqdist(X[start:stop], X)
        local = np.arange(stop - start)
        d[local, local + start] = np.inf
        if k < n - 1:
            cand = np.argpartition(d, k - 1, axis=1)[:, :k]
        else:
            cand = np.broadcast_to(np.arange(n), d.shape)
            cand = cand[d != np.inf].reshape(stop - start, n - 1)
        cd = np.take_along_axis(d, cand, axis=1)
        order = np.lexsort((cand, cd), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        cd = np.take_along_axis(cd, order, axis=1)
        if k < n - 1:
            # argpartition breaks ties at the k-th distance arbitrarily; redo those rows
            tied = (d <= cd[:, -1:]).sum(axis=1) > k
            for r in np.flatnonzero(tied):
                full = np.lexsort((np.arange(n), d[r]))[:k]
                cand[r], cd[r] = full, d[r, full]
        indices[start:stop] = cand
        sqdist[start:stop] = cd
    return KnnResult(indices, sqdist)


def build_graph(result: KnnResult, k: int | None = None) -> SparseGraph:
    """Gaussian-weighted kNN adjacency.

    ``sigma`` is the mean over nodes of the largest neighbor squared distance,
    and edge weights are ``exp(-E / sigma**2)`` with ``E`` the squared
    distance. The directed kNN relation is symmetrized with an entrywise max.
    ``k`` may restrict the table to its first ``k`` columns.
    """
    idx, E = result.indices, result.sqdist
    if k is not None:
        if not 1 <= k <= idx.shape[1]:
            raise ValueError(f"k={k} exceeds the neighbor table width {idx.shape[1]}")
        idx, E = idx[:, :k], E[:, :k]
    n, kk = idx.shape
    # sorted sums keep sigma and the degrees independent of point order
    sigma = float(np.sort(E.max(axis=1)).sum() / n)
    if not sigma > 0:
        raise DegenerateCloudError("all neighbor distances are zero; sigma would be 0")
    w = np.exp(-E / sigma**2)
    rows = np.repeat(np.arange(n), kk)
    directed = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
    W = directed.maximum(directed.T).tocsr()
    W.sort_indices()
    C = W.tocoo()
    order = np.lexsort((C.data, C.row))
    degree = np.bincount(C.row[order], weights=C.data[order], minlength=n)
    return SparseGraph(W, degree, sigma)


def knn_graph(X, k: int) -> SparseGraph:
    return build_graph(knn(X, k))


def laplacian(g: SparseGraph, kind: str = "random_walk") -> Laplacian:
    """``I - D^-1 W`` (``random_walk``) or ``I - D^-1/2 W D^-1/2`` (``symmetric_normalized``)."""
    d = g.degree
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        bad = int(np.flatnonzero(~(d > 0))[0]) if np.any(~(d > 0)) else -1
        raise NumericalError(f"node {bad} has zero degree")
    W = g.weights.tocoo()
    if kind in ("random_walk", "rw"):
        vals = -W.data / d[W.row]
        kind = "random_walk"
    elif kind in ("symmetric_normalized", "sym"):
        # sqrt of the product keeps (i, j) and (j, i) bitwise equal
        vals = -W.data / np.sqrt(d[W.row] * d[W.col])
        kind = "symmetric_normalized"
    else:
        raise ValueError(f"unknown Laplacian kind {kind!r}")
    n = g.n_nodes
    diag = np.arange(n)
    L = sp.csr_matrix(
        (np.concatenate([vals, np.ones(n)]), (np.concatenate([W.row, diag]), np.concatenate([W.col, diag]))),
        shape=(n, n),
    )
    L.sort_indices()
    return Laplacian(kind, L, g)


def shift_apply(L, X) -> np.ndarray:
    """Sparse product ``L @ X``."""
    M = L.matrix if isinstance(L, Laplacian) else L
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != M.shape[1]:
        raise DataError(f"signal has {X.shape[0]} rows but the operator has {M.shape[1]} nodes")
    return M @ X


def format_edges(g: SparseGraph) -> str:
    """Edge list ``i j w`` sorted by ``(i, j)``, weights at 17 significant digits."""
    W = g.weights.tocoo()
    order = np.lexsort((W.col, W.row))
    return "".join("%d %d %.17g\n" % (W.row[t], W.col[t], W.data[t]) for t in order)
