"""K-localized Chebyshev graph convolution with an analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import DataError, NumericalError
from .graph import Laplacian
from .rng import as_rng, uniform

__all__ = [
    "ScaledLaplacian",
    "ChebLayerParams",
    "ChebCache",
    "ChebGrads",
    "scale_laplacian",
    "cheb_basis",
    "cheb_forward",
    "cheb_backward",
    "init_cheb_params",
]

ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True, eq=False)
class ScaledLaplacian:
    """``L_sym - I``: spectrum of a normalized Laplacian moved from [0, 2] into [-1, 1]."""

    matrix: sp.csr_matrix
    source: Optional[Laplacian] = None

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


@dataclass(eq=False)
class ChebLayerParams:
    """Per-order filters ``weights[k]`` (F_in x F_out) and a bias.

    With ``scalar_theta`` set, the filters are tied as ``theta[k] * dense``:
    one scalar per order and a single shared F_in x F_out matrix.
    """

    weights: Optional[np.ndarray]
    bias: np.ndarray
    activation: str = "relu"
    theta: Optional[np.ndarray] = None
    dense: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.scalar_theta:
            self.theta = np.asarray(self.theta, dtype=np.float64)
            self.dense = np.asarray(self.dense, dtype=np.float64)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.ndim != 3 or self.weights.shape[0] < 1:
                raise DataError(f"weights must be K x F_in x F_out with K >= 1, got {self.weights.shape}")
        if self.bias.shape != (self.effective_weights().shape[2],):
            raise DataError("bias length must equal F_out")

    @property
    def scalar_theta(self) -> bool:
        return self.theta is not None

    @property
    def order(self) -> int:
        return self.effective_weights().shape[0]

    def effective_weights(self) -> np.ndarray:
        if self.scalar_theta:
            return self.theta[:, None, None] * self.dense[None]
        return self.weights


@dataclass(eq=False)
class ChebCache:
    bases: list
    pre_activation: np.ndarray


@dataclass(eq=False)
class ChebGrads:
    weights: Optional[np.ndarray]
    bias: np.ndarray
    x: np.ndarray
    theta: Optional[np.ndarray] = None
    dense: Optional[np.ndarray] = None


def scale_laplacian(L: Laplacian) -> ScaledLaplacian:
    """Subtract the identity from a symmetric normalized Laplacian (lambda_max bound 2)."""
    if not isinstance(L, Laplacian) or L.kind != "symmetric_normalized":
        raise ValueError("scale_laplacian needs a symmetric_normalized Laplacian")
    M = (L.matrix - sp.identity(L.n_nodes, format="csr")).tocsr()
    M.setdiag(0.0)
    M.eliminate_zeros()
    M.sort_indices()
    return ScaledLaplacian(M, L)


def _matrix(Lt):
    return Lt.matrix if isinstance(Lt, ScaledLaplacian) else Lt


def cheb_basis(Lt, X, K: int) -> list:
    """``[T_0(Lt) X, ..., T_{K-1}(Lt) X]`` by the three-term recurrence."""
    if K < 1:
        raise ValueError("K_cheb must be >= 1")
    M = _matrix(Lt)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != M.shape[0]:
        raise DataError(f"signal has {X.shape[0]} rows, graph has {M.shape[0]} nodes")
    bases = [X]
    if K > 1:
        bases.append(M @ X)
    for _ in range(2, K):
        bases.append(2.0 * (M @ bases[-1]) - bases[-2])
    return bases


def cheb_forward(Lt, X, params: ChebLayerParams, return_cache: bool = False):
    """``act(sum_k T_k(Lt) X weights[k] + bias)``."""
    Wk = params.effective_weights()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != Wk.shape[1]:
        raise DataError(f"input has {X.shape[-1]} channels, layer expects {Wk.shape[1]}")
    bases = cheb_basis(Lt, X, Wk.shape[0])
    pre = params.bias + sum(B @ W for B, W in zip(bases, Wk))
    if not np.all(np.isfinite(pre)):
        raise NumericalError("Chebyshev layer produced non-finite values")
    out = np.maximum(pre, 0.0) if params.activation == "relu" else pre
    if return_cache:
        return out, ChebCache(bases, pre)
    return out


def cheb_backward(Lt, cache: Optional[ChebCache], params: ChebLayerParams, upstream) -> ChebGrads:
    """Gradients of the layer for an upstream gradient on its output.

    Uses ``Lt.T == Lt`` to run the recurrence backwards for the input gradient.
    ReLU's derivative at 0 is taken as 0.
    """
    if cache is None:
        raise ValueError("cheb_backward needs the cache returned by cheb_forward(..., return_cache=True)")
    M = _matrix(Lt)
    U = np.asarray(upstream, dtype=np.float64)
    if U.shape != cache.pre_activation.shape:
        raise DataError(f"upstream shape {U.shape} != output shape {cache.pre_activation.shape}")
    if params.activation == "relu":
        U = U * (cache.pre_activation > 0)
    Wk = params.effective_weights()
    K = Wk.shape[0]
    d_w = np.stack([B.T @ U for B in cache.bases])
    d_b = U.sum(axis=0)
    G = [U @ W.T for W in Wk]
    for k in range(K - 1, 1, -1):
        G[k - 1] = G[k - 1] + 2.0 * (M.T @ G[k])
        G[k - 2] = G[k - 2] - G[k]
    d_x = G[0] + (M.T @ G[1]) if K > 1 else G[0]
    if params.scalar_theta:
        d_theta = np.einsum("kij,ij->k", d_w, params.dense)
        d_dense = np.einsum("k,kij->ij", params.theta, d_w)
        return ChebGrads(None, d_b, d_x, theta=d_theta, dense=d_dense)
    return ChebGrads(d_w, d_b, d_x)


def init_cheb_params(
    f_in: int,
    f_out: int,
    K: int,
    rng,
    activation: str = "relu",
    scalar_theta: bool = False,
) -> ChebLayerParams:
    """Uniform in +-sqrt(6 / (f_in * K + f_out)), zero bias."""
    rng = as_rng(rng)
    bound = np.sqrt(6.0 / (f_in * K + f_out))
    bias = np.zeros(f_out)
    if scalar_theta:
        dense = bound * (2 * uniform(rng, (f_in, f_out)) - 1)
        return ChebLayerParams(None, bias, activation, theta=np.ones(K), dense=dense)
    weights = bound * (2 * uniform(rng, (K, f_in, f_out)) - 1)
    return ChebLayerParams(weights, bias, activation)
