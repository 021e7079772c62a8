"""Acceptance gate: one test per primary criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured value.
Run alone with ``pytest -m acceptance``.
"""

import time

import numpy as np
import pytest

from conftest import record, rel_dev, tiny_config
from tinet.cheb_gcn import ChebLayerParams, cheb_basis, cheb_forward, scale_laplacian
from tinet.checkpoint import dumps, load_checkpoint, save_checkpoint
from tinet.cli import main
from tinet.graph import knn_graph, laplacian
from tinet.model import ModelConfig, TINet, prepare
from tinet.pointcloud import SHAPE_KINDS, SyntheticShapeSpec, generate_shape, random_rotation, shape_dataset
from tinet.pooling import coarsen, pool_features, top_indices
from tinet.presets import preset
from tinet.rng import make_rng
from tinet.ti_encoder import encode
from tinet.training import evaluate, train

pytestmark = pytest.mark.acceptance

DATA_SEED = 1
EVAL_SEED = 3


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="session")
def desk_data():
    train_set = shape_dataset(SHAPE_KINDS, 100, 512, seed=DATA_SEED, jitter_sigma=0.01)
    test_set = shape_dataset(SHAPE_KINDS, 50, 512, seed=DATA_SEED, jitter_sigma=0.01, offset=1000)
    return train_set, test_set


def _fit(mode, data):
    model_cfg, train_cfg = preset("desk", n_classes=len(SHAPE_KINDS), input_mode=mode)
    model = TINet(model_cfg, seed=0)
    t0 = time.perf_counter()
    train(model, *data, train_cfg)
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def ti_model(desk_data):
    return _fit("ti_features", desk_data[0])


@pytest.fixture(scope="session")
def raw_model(desk_data):
    return _fit("raw_coordinates", desk_data[0])


# ------------------------------------------------------------------ criteria


def test_invariance():
    t0 = time.perf_counter()
    cfg = ModelConfig(graph_k=16, ti_order=3)
    model = TINet(cfg, seed=11)
    rng = make_rng(2024)
    worst_raw = worst_logit = 0.0
    for c in range(200):
        n = (64, 512, 1024)[c % 3]
        kind = SHAPE_KINDS[c % len(SHAPE_KINDS)]
        X = generate_shape(SyntheticShapeSpec(kind, n, seed=c, jitter=0.01)).points
        X = X * (0.5 + rng.random()) + rng.normal(size=3)
        raw = encode(X, 16, 3)[0].matrix
        logits = model.predict_logits(prepare(X, cfg))
        for _ in range(5):
            Y = X @ random_rotation(rng, "uniform_so3").rotation.T + rng.normal(size=3) * 5
            worst_raw = max(worst_raw, rel_dev(encode(Y, 16, 3)[0].matrix, raw))
            worst_logit = max(worst_logit, rel_dev(model.predict_logits(prepare(Y, cfg)), logits))
    elapsed = time.perf_counter() - t0
    ok = worst_raw < 1e-9 and worst_logit < 1e-7 and elapsed < 120
    record("invariance", ok, f"raw={worst_raw:.2e} (<1e-9) logits={worst_logit:.2e} (<1e-7) time={elapsed:.0f}s (<120)")
    assert ok


def _dense_cheb(D, k):
    lam, V = np.linalg.eigh(D)
    return (V * np.cos(k * np.arccos(np.clip(lam, -1, 1)))) @ V.T


def test_chebyshev_oracle():
    rng = make_rng(77)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 17))
        k = int(rng.integers(1, n))
        K = int(rng.integers(1, 6))
        Lt = scale_laplacian(laplacian(knn_graph(rng.normal(size=(n, 3)), k), "symmetric_normalized"))
        D = Lt.matrix.toarray()
        f_in, f_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        X = rng.normal(size=(n, f_in))
        p = ChebLayerParams(rng.normal(size=(K, f_in, f_out)), rng.normal(size=f_out), "none")
        polys = [_dense_cheb(D, j) for j in range(K)]
        for B, T in zip(cheb_basis(Lt, X, K), polys):
            worst = max(worst, rel_dev(B, T @ X))
        want = sum(T @ X @ W for T, W in zip(polys, p.weights)) + p.bias
        worst = max(worst, rel_dev(cheb_forward(Lt, X, p), want))
    record("chebyshev oracle", worst < 1e-10, f"max rel dev={worst:.2e} (<1e-10)")
    assert worst < 1e-10


def _pool_margin(model, geom):
    """Smallest gap between the winning and runner-up value of any max-pool."""
    _, _, cache = model.forward(geom)
    cfg = model.config
    gaps = []
    for i, (stage, c) in enumerate(cache["cheb"]):
        H = np.maximum(c.pre_activation, 0)
        if i in cfg.pool_after:
            groups = geom.plans[stage].clusters
        elif i == len(cfg.gcn_widths) - 1:
            groups = np.arange(H.shape[0])[None]
        else:
            continue
        if groups.shape[1] > 1:
            vals = np.sort(H[groups], axis=1)
            # ties among ReLU zeros carry no gradient either way
            live = vals[:, -1] > 0
            if live.any():
                gaps.append(float((vals[:, -1] - vals[:, -2])[live].min()))
    return min(gaps) if gaps else np.inf


def _fd_rel(model, geom, label, h=1e-6):
    _, grads, _ = model.loss_and_grads([geom], [label])
    worst = 0.0
    for name, p in model.params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = model.loss_and_grads([geom], [label])[0]
            p[idx] = old - h
            lm = model.loss_and_grads([geom], [label])[0]
            p[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        worst = max(worst, float(np.abs(num - grads[name]).max() / max(np.abs(grads[name]).max(), 1e-12)))
    return worst


def test_gradient_integrity():
    t0 = time.perf_counter()
    variants = {
        "ti": tiny_config(),
        "raw": tiny_config(input_mode="raw_coordinates"),
        "pooled": tiny_config(pool_after=(0,), pool_ratio=0.25),
    }
    results = {}
    for name, cfg in variants.items():
        model = TINet(cfg, seed=5)
        for attempt in range(10):
            X = generate_shape(SyntheticShapeSpec("cone", 64, seed=attempt, jitter=0.02)).points
            geom = prepare(X, cfg)
            # resample clouds whose max-pool winners are nearly tied
            if _pool_margin(model, geom) > 1e-4:
                break
        results[name] = _fd_rel(model, geom, label=1)
    elapsed = time.perf_counter() - t0
    ok = max(results.values()) < 1e-6 and elapsed < 60
    detail = " ".join(f"{k}={v:.1e}" for k, v in results.items())
    record("gradient integrity", ok, f"{detail} (<1e-6) time={elapsed:.0f}s (<60)")
    assert ok


def test_desk_z_so3(desk_data, ti_model, raw_model):
    test_set = desk_data[1]
    t0 = time.perf_counter()
    ti_so3 = evaluate(ti_model[0], *test_set, "so3", EVAL_SEED).accuracy
    raw_z = evaluate(raw_model[0], *test_set, "z", EVAL_SEED).accuracy
    raw_so3 = evaluate(raw_model[0], *test_set, "so3", EVAL_SEED).accuracy
    elapsed = ti_model[1] + raw_model[1] + time.perf_counter() - t0
    gap = raw_z - raw_so3
    ok = ti_so3 >= 0.80 and gap >= 0.20 and elapsed < 900
    record(
        "desk z/SO(3)",
        ok,
        f"ti so3={ti_so3:.3f} (>=0.80) raw z={raw_z:.3f} so3={raw_so3:.3f} gap={gap:.3f} (>=0.20) time={elapsed:.0f}s",
    )
    assert ok


def test_point_density(ti_model):
    model = ti_model[0]
    full = shape_dataset(SHAPE_KINDS, 50, 512, seed=DATA_SEED, jitter_sigma=0.01, offset=1000)
    half = shape_dataset(SHAPE_KINDS, 50, 256, seed=DATA_SEED, jitter_sigma=0.01, offset=1000)
    t0 = time.perf_counter()
    a512 = evaluate(model, *full, "so3", EVAL_SEED).accuracy
    a256 = evaluate(model, *half, "so3", EVAL_SEED).accuracy
    elapsed = time.perf_counter() - t0
    drop = a512 - a256
    ok = drop <= 0.10 and elapsed < 300
    record("N=256 robustness", ok, f"N=512 {a512:.3f} N=256 {a256:.3f} drop={drop:.3f} (<=0.10)")
    assert ok


def test_noise(ti_model):
    model = ti_model[0]
    t0 = time.perf_counter()
    acc = {}
    for sigma in (0.0, 0.02):
        data = shape_dataset(SHAPE_KINDS, 50, 512, seed=DATA_SEED, jitter_sigma=sigma, offset=1000)
        acc[sigma] = evaluate(model, *data, "so3", EVAL_SEED).accuracy
    elapsed = time.perf_counter() - t0
    drop = acc[0.0] - acc[0.02]
    ok = drop <= 0.10 and elapsed < 300
    record("noise robustness", ok, f"sigma=0 {acc[0.0]:.3f} sigma=0.02 {acc[0.02]:.3f} drop={drop:.3f} (<=0.10)")
    assert ok


def test_pooling_correctness():
    rng = make_rng(99)
    sort_ok = pool_ok = motion_ok = True
    for _ in range(200):
        n = int(rng.integers(1, 300))
        scores = np.round(rng.normal(size=n), int(rng.integers(1, 4)))  # rounding forces ties
        n_keep = int(rng.integers(1, n + 1))
        oracle = sorted(range(n), key=lambda i: (-scores[i], i))[:n_keep]
        sort_ok &= top_indices(scores, n_keep).tolist() == oracle
        pts = rng.normal(size=(n, 3))
        plan = coarsen(pts, scores, n_keep, int(rng.integers(1, n + 1)))
        sort_ok &= plan.kept.tolist() == oracle
        X = rng.normal(size=(n, 4))
        brute = np.array([[max(X[j, c] for j in cl) for c in range(4)] for cl in plan.clusters])
        pool_ok &= np.array_equal(pool_features(plan, X), brute)
    for c in range(50):
        X = rng.normal(size=(200, 3))
        raw, _ = encode(X, 16, 1)
        kept = set(coarsen(X - X.mean(0), raw, 50, 8).kept)
        Y = X @ random_rotation(rng).rotation.T + rng.normal(size=3)
        raw_y, _ = encode(Y, 16, 1)
        motion_ok &= set(coarsen(Y - Y.mean(0), raw_y, 50, 8).kept) == kept
    ok = sort_ok and pool_ok and motion_ok
    record("pooling correctness", ok, f"sort oracle={sort_ok} per-cluster max={pool_ok} rigid motion={motion_ok}")
    assert ok


def test_determinism_and_persistence(tmp_path, capsys, desk_data):
    data_dir = tmp_path / "d"
    assert main(["gen-data", "--out", str(data_dir), "--classes", "sphere,cube,torus", "--per-class", "4",
                 "--points", "96", "--seed", "5", "--jitter", "0.01"]) == 0
    capsys.readouterr()
    (tmp_path / "c.cfg").write_text("graph_k=8\nti_channels=8\ngcn_widths=8,16\npool_k=6\ndense_widths=16\nepochs=3\n")
    runs = []
    for i in range(2):
        ckpt = tmp_path / f"m{i}.ckpt"
        assert main(["train", "--manifest", str(data_dir / "manifest.txt"), "--config", str(tmp_path / "c.cfg"),
                     "--seed", "9", "--ckpt", str(ckpt), "--metrics", str(tmp_path / f"metrics{i}.csv")]) == 0
        capsys.readouterr()
        runs.append((tmp_path / f"metrics{i}.csv").read_bytes())
    csv_ok = runs[0] == runs[1] and len(runs[0].splitlines()) == 5

    model = load_checkpoint(tmp_path / "m0.ckpt")
    save_checkpoint(model, tmp_path / "again.ckpt")
    back = load_checkpoint(tmp_path / "again.ckpt")
    geoms = [prepare(c, model.config) for c in desk_data[1][0][::25]]
    logits_ok = all(np.array_equal(model.predict_logits(g), back.predict_logits(g)) for g in geoms)
    text_ok = dumps(back) == (tmp_path / "m0.ckpt").read_text() == (tmp_path / "m1.ckpt").read_text()
    ok = csv_ok and logits_ok and text_ok
    record("determinism & persistence", ok, f"metrics bytes equal={csv_ok} logits bitwise={logits_ok} ckpt bytes={text_ok}")
    assert ok
