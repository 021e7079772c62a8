"""The classifier network: TI front end, Chebyshev GCN stack, pooling, dense head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cheb_gcn import ChebLayerParams, cheb_backward, cheb_forward, init_cheb_params, scale_laplacian
from .exceptions import DataError, NumericalError
from .graph import knn, build_graph, laplacian
from .pointcloud import PointCloud, normalize_unit_sphere
from .pooling import coarsen, pool_backward, pool_features, rebuild_graph
from .rng import as_rng, make_rng, uniform
from .ti_encoder import TiLayerParams, raw_features, ti_layer_backward, ti_layer_forward

__all__ = ["ModelConfig", "Geometry", "TINet", "prepare", "softmax_cross_entropy", "class_weights"]

INPUT_MODES = ("ti_features", "raw_coordinates")
RAW_SCALINGS = ("none", "mean", "dataset")


@dataclass
class ModelConfig:
    """Architecture of :class:`TINet`.

    The default is the pooled model: TI(K=3, 32 channels) -> GCN(64) ->
    pool(N/4, m=8, rebuild k=16) -> GCN(128) -> global max -> dense
    [256, 64, n_classes]. ``pool_after=()`` gives the two-GCN baseline.
    """

    n_classes: int = 5
    input_mode: str = "ti_features"
    graph_k: int = 16
    k_reference_points: int = 0
    ti_order: int = 3
    ti_channels: int = 32
    include_order0: bool = False
    raw_scaling: str = "dataset"
    gcn_widths: tuple = (64, 128)
    cheb_orders: tuple = (3, 3)
    scalar_theta: bool = False
    pool_after: tuple = (0,)
    pool_ratio: float = 0.25
    pool_m: int = 8
    pool_k: int = 16
    pool_score: str = "contour1"
    dense_widths: tuple = (256, 64)
    keep_prob: float = 0.7
    l2: float = 1e-4

    def __post_init__(self):
        self.gcn_widths = tuple(int(v) for v in self.gcn_widths)
        self.cheb_orders = tuple(int(v) for v in self.cheb_orders)
        self.pool_after = tuple(int(v) for v in self.pool_after)
        self.dense_widths = tuple(int(v) for v in self.dense_widths)
        self.validate()

    def validate(self) -> None:
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if self.raw_scaling not in RAW_SCALINGS:
            raise ValueError(f"raw_scaling must be one of {RAW_SCALINGS}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not self.gcn_widths or len(self.gcn_widths) != len(self.cheb_orders):
            raise ValueError("gcn_widths and cheb_orders must be non-empty and of equal length")
        if any(k < 1 for k in self.cheb_orders) or self.ti_order < 1 or self.graph_k < 1:
            raise ValueError("orders and k must be >= 1")
        if any(not 0 <= p < len(self.gcn_widths) - 1 for p in self.pool_after):
            raise ValueError("pool_after entries must index a GCN layer that has a successor")
        if not 0 < self.pool_ratio <= 1 or self.pool_m < 1 or self.pool_k < 1:
            raise ValueError("invalid pooling stage spec")
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.k_reference_points < 0:
            raise ValueError("k_reference_points must be >= 0")

    def neighbors(self, base: int, n_points: int, n_reference: float | None = None) -> int:
        """Neighborhood size used on a cloud of ``n_points`` points (uncapped).

        ``n_reference`` defaults to ``k_reference_points``; 0 disables scaling.
        """
        ref = self.k_reference_points if n_reference is None else n_reference
        return base if ref <= 0 else max(1, int(round(base * n_points / ref)))

    @property
    def raw_channels(self) -> int:
        return 2 * (self.ti_order + int(self.include_order0))

    @property
    def input_channels(self) -> int:
        return self.ti_channels if self.input_mode == "ti_features" else 3

    def param_shapes(self) -> dict:
        """Trainable tensors in declared order, each as ``(rows, cols)``.

        Chebyshev filters are stored stacked, ``(K * F_in, F_out)``.
        """
        shapes = {}
        f = self.input_channels
        if self.input_mode == "ti_features":
            shapes["ti.theta"] = (self.raw_channels, self.ti_channels)
            shapes["ti.bias"] = (1, self.ti_channels)
        for i, (width, K) in enumerate(zip(self.gcn_widths, self.cheb_orders)):
            if self.scalar_theta:
                shapes[f"gcn{i}.theta"] = (1, K)
                shapes[f"gcn{i}.dense"] = (f, width)
            else:
                shapes[f"gcn{i}.weights"] = (K * f, width)
            shapes[f"gcn{i}.bias"] = (1, width)
            f = width
        for j, width in enumerate((*self.dense_widths, self.n_classes)):
            shapes[f"fc{j}.weights"] = (f, width)
            shapes[f"fc{j}.bias"] = (1, width)
            f = width
        return shapes

    def to_flat(self) -> dict:
        out = {}
        for fld in dataclasses.fields(self):
            v = getattr(self, fld.name)
            if isinstance(v, tuple):
                out[fld.name] = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                out[fld.name] = "true" if v else "false"
            elif isinstance(v, float):
                out[fld.name] = repr(v)
            else:
                out[fld.name] = str(v)
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "ModelConfig":
        return cls(**_parse_flat(cls, flat))


def _parse_flat(cls, flat: dict) -> dict:
    """Convert ``key -> str`` pairs into typed dataclass keyword arguments."""
    defaults = cls()
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key, raw in flat.items():
        if key not in names:
            raise DataError(f"unknown {cls.__name__} field {key!r}")
        proto = getattr(defaults, key)
        raw = str(raw).strip()
        try:
            if isinstance(proto, bool):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                kwargs[key] = raw.lower() in ("true", "1")
            elif isinstance(proto, tuple):
                kwargs[key] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif isinstance(proto, int):
                kwargs[key] = int(raw)
            elif isinstance(proto, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError:
            raise DataError(f"bad value {raw!r} for {cls.__name__}.{key}") from None
    return kwargs


@dataclass(eq=False)
class Geometry:
    """Everything about one cloud that does not depend on trainable parameters.

    ``coords`` are the unit-sphere-normalized points, ``raw`` the (scaled)
    TI features, ``laplacians[s]`` the scaled Laplacian of resolution ``s``
    and ``plans[s]`` the pooling plan from resolution ``s`` to ``s + 1``.
    """

    coords: np.ndarray
    raw: np.ndarray
    laplacians: list
    plans: list = field(default_factory=list)

    def rotated(self, rotation: np.ndarray) -> "Geometry":
        # graph, raw features and plans depend only on distances
        return Geometry(self.coords @ rotation.T, self.raw, self.laplacians, self.plans)


def prepare(cloud, config: ModelConfig) -> Geometry:
    """Normalize a cloud and build its graphs, raw features and pooling plans."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise DataError(f"expected an N x 3 cloud with N >= 2, got {pts.shape}")
    X = normalize_unit_sphere(pts)
    n0 = X.shape[0]
    g = build_graph(knn(X, min(n0 - 1, config.neighbors(config.graph_k, n0))))
    raw = raw_features(laplacian(g, "random_walk"), X, config.ti_order, config.include_order0)
    feats = raw.matrix
    if config.raw_scaling == "mean":
        scale = feats.mean(axis=0)
        feats = feats / np.where(scale > 0, scale, 1.0)
    laps = [scale_laplacian(laplacian(g, "symmetric_normalized"))]
    plans = []
    coords = X
    scores = raw
    ref = float(config.k_reference_points)
    for _ in config.pool_after:
        n = coords.shape[0]
        n_keep = min(n, max(2, int(round(n * config.pool_ratio))))
        m = min(n, config.neighbors(config.pool_m, n, ref))
        plan = coarsen(coords, scores, n_keep, m, config.pool_score)
        plans.append(plan)
        coords = coords[plan.kept]
        ref *= config.pool_ratio
        g = rebuild_graph(coords, min(n_keep - 1, config.neighbors(config.pool_k, n_keep, ref)))
        laps.append(scale_laplacian(laplacian(g, "symmetric_normalized")))
        # a further stage ranks the coarse cloud by its own contour variance
        scores = raw_features(laplacian(g, "random_walk"), coords - coords.mean(axis=0), 1)
    return Geometry(X, feats, laps, plans)


def class_weights(labels, n_classes: int) -> np.ndarray:
    """Inverse class frequency, normalized to mean 1 over the classes present."""
    counts = np.bincount(np.asarray(labels), minlength=n_classes).astype(np.float64)
    w = np.zeros(n_classes)
    present = counts > 0
    w[present] = 1.0 / counts[present]
    return w / w[present].mean()


def softmax_cross_entropy(logits, label: int, weight: float = 1.0) -> tuple:
    """``(weight * CE, d loss / d logits)`` for one sample."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[0]:
        raise DataError(f"label {label} outside [0, {z.shape[0]})")
    shift = z - z.max()
    logsum = np.log(np.exp(shift).sum())
    p = np.exp(shift - logsum)
    grad = p.copy()
    grad[label] -= 1.0
    return weight * (logsum - shift[label]), weight * grad


class TINet:
    """Parameters plus per-sample forward/backward of the classifier."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: Optional[dict] = None):
        self.config = config
        self.seed = seed
        self.params = params if params is not None else self._init_params(seed)
        # non-trainable tensors, saved with the checkpoint
        self.buffers = {}
        if config.input_mode == "ti_features":
            self.buffers["ti.scale"] = np.ones(config.raw_channels)
        self.epoch = 0

    # ---------------------------------------------------------------- params

    def _init_params(self, seed) -> dict:
        cfg = self.config
        rng = make_rng(seed, 7)
        params = {}
        f = cfg.input_channels
        if cfg.input_mode == "ti_features":
            bound = np.sqrt(6.0 / (cfg.raw_channels + cfg.ti_channels))
            params["ti.theta"] = bound * (2 * uniform(rng, (cfg.raw_channels, cfg.ti_channels)) - 1)
            params["ti.bias"] = np.zeros(cfg.ti_channels)
        for i, (width, K) in enumerate(zip(cfg.gcn_widths, cfg.cheb_orders)):
            p = init_cheb_params(f, width, K, rng, scalar_theta=cfg.scalar_theta)
            if cfg.scalar_theta:
                params[f"gcn{i}.theta"], params[f"gcn{i}.dense"] = p.theta, p.dense
            else:
                params[f"gcn{i}.weights"] = p.weights
            params[f"gcn{i}.bias"] = p.bias
            f = width
        for j, width in enumerate((*cfg.dense_widths, cfg.n_classes)):
            bound = np.sqrt(6.0 / (f + width))
            params[f"fc{j}.weights"] = bound * (2 * uniform(rng, (f, width)) - 1)
            params[f"fc{j}.bias"] = np.zeros(width)
            f = width
        return params

    def fit_raw_scale(self, geoms) -> None:
        """Set the per-channel raw feature scale to its mean over ``geoms`` (``dataset`` scaling)."""
        if self.config.input_mode != "ti_features" or self.config.raw_scaling != "dataset":
            return
        scale = np.mean([g.raw.mean(axis=0) for g in geoms], axis=0)
        self.buffers["ti.scale"] = np.where(scale > 0, scale, 1.0)

    def _ti_input(self, geom: Geometry) -> np.ndarray:
        if self.config.raw_scaling == "dataset":
            return geom.raw / self.buffers["ti.scale"]
        return geom.raw

    @staticmethod
    def is_weight(name: str) -> bool:
        """Tensors that the L2 penalty applies to (everything except biases)."""
        return not name.endswith(".bias")

    def l2_penalty(self) -> float:
        return self.config.l2 * sum(float((v * v).sum()) for k, v in self.params.items() if self.is_weight(k))

    def _cheb(self, i: int) -> ChebLayerParams:
        p = self.params
        if self.config.scalar_theta:
            return ChebLayerParams(None, p[f"gcn{i}.bias"], "relu", theta=p[f"gcn{i}.theta"], dense=p[f"gcn{i}.dense"])
        return ChebLayerParams(p[f"gcn{i}.weights"], p[f"gcn{i}.bias"], "relu")

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # --------------------------------------------------------------- forward

    def forward(self, geom: Geometry, train: bool = False, rng=None) -> tuple:
        """Return ``(logits, descriptor, cache)``.

        ``train=True`` applies inverted dropout on the hidden dense layers,
        drawing masks from ``rng``.
        """
        cfg = self.config
        cache = {"geom": geom, "cheb": [], "pool": []}
        if cfg.input_mode == "ti_features":
            H = ti_layer_forward(self._ti_input(geom), TiLayerParams(self.params["ti.theta"], self.params["ti.bias"]))
        else:
            H = geom.coords
        stage = 0
        for i in range(len(cfg.gcn_widths)):
            H, c = cheb_forward(geom.laplacians[stage], H, self._cheb(i), return_cache=True)
            cache["cheb"].append((stage, c))
            if i in cfg.pool_after:
                plan = geom.plans[stage]
                H, arg = pool_features(plan, H, return_argmax=True)
                cache["pool"].append((plan, arg, c.pre_activation.shape[1]))
                stage += 1
        cache["gmax_arg"] = H.argmax(axis=0)
        cache["gmax_rows"] = H.shape[0]
        desc = H.max(axis=0)
        a = desc
        dense = []
        n_fc = len(cfg.dense_widths) + 1
        if train and cfg.keep_prob < 1:
            rng = as_rng(0 if rng is None else rng)
        for j in range(n_fc):
            z = a @ self.params[f"fc{j}.weights"] + self.params[f"fc{j}.bias"]
            mask = None
            if j < n_fc - 1:
                out = np.maximum(z, 0.0)
                if train and cfg.keep_prob < 1:
                    mask = (uniform(rng, z.shape) < cfg.keep_prob) / cfg.keep_prob
                    out = out * mask
            else:
                out = z
            dense.append((a, z, mask))
            a = out
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite logits (dense layer {n_fc - 1})")
        cache["dense"] = dense
        return a, desc, cache

    def predict_logits(self, geom: Geometry) -> np.ndarray:
        return self.forward(geom)[0]

    # -------------------------------------------------------------- backward

    def backward(self, cache: Optional[dict], d_logits) -> dict:
        """Gradients of every parameter for ``d loss / d logits`` (penalty excluded)."""
        if cache is None or "dense" not in cache:
            raise ValueError("backward needs the cache from forward()")
        cfg = self.config
        grads = {}
        g = np.asarray(d_logits, dtype=np.float64)
        n_fc = len(cache["dense"])
        for j in range(n_fc - 1, -1, -1):
            a, z, mask = cache["dense"][j]
            if j < n_fc - 1:
                if mask is not None:
                    g = g * mask
                g = g * (z > 0)
            grads[f"fc{j}.weights"] = np.outer(a, g)
            grads[f"fc{j}.bias"] = g
            g = self.params[f"fc{j}.weights"] @ g
        H_grad = np.zeros((cache["gmax_rows"], g.shape[0]))
        H_grad[cache["gmax_arg"], np.arange(g.shape[0])] = g
        geom = cache["geom"]
        pools = list(cache["pool"])
        for i in range(len(cfg.gcn_widths) - 1, -1, -1):
            if i in cfg.pool_after:
                plan, arg, width = pools.pop()
                H_grad = pool_backward(plan, arg, H_grad, width)
            stage, c = cache["cheb"][i]
            lg = cheb_backward(geom.laplacians[stage], c, self._cheb(i), H_grad)
            if cfg.scalar_theta:
                grads[f"gcn{i}.theta"], grads[f"gcn{i}.dense"] = lg.theta, lg.dense
            else:
                grads[f"gcn{i}.weights"] = lg.weights
            grads[f"gcn{i}.bias"] = lg.bias
            H_grad = lg.x
        if cfg.input_mode == "ti_features":
            d_theta, d_bias = ti_layer_backward(self._ti_input(geom), TiLayerParams(self.params["ti.theta"], self.params["ti.bias"]), H_grad)
            grads["ti.theta"], grads["ti.bias"] = d_theta, d_bias
        return grads

    def loss_and_grads(self, geoms, labels, weights=None, train=False, rng=None) -> tuple:
        """Mean weighted cross-entropy over a batch plus the L2 penalty, with gradients.

        Returns ``(loss, grads, logits)``.
        """
        n = len(geoms)
        if weights is None:
            weights = np.ones(self.config.n_classes)
        total = {k: np.zeros_like(v) for k, v in self.params.items()}
        loss = 0.0
        all_logits = []
        for geom, y in zip(geoms, labels):
            logits, _, cache = self.forward(geom, train=train, rng=rng)
            l, dz = softmax_cross_entropy(logits, int(y), float(weights[int(y)]))
            loss += l / n
            for k, v in self.backward(cache, dz / n).items():
                total[k] += v
            all_logits.append(logits)
        loss += self.l2_penalty()
        for k in total:
            if self.is_weight(k):
                total[k] += 2.0 * self.config.l2 * self.params[k]
        return loss, total, np.array(all_logits)

    # ------------------------------------------------------ flat tensor views

    def tensor(self, name: str) -> np.ndarray:
        """Parameter ``name`` reshaped to its declared 2-d checkpoint layout."""
        rows, cols = self.config.param_shapes()[name]
        return self.params[name].reshape(rows, cols)

    def set_tensor(self, name: str, value) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64).reshape(self.params[name].shape).copy()
