import numpy as np
import pytest

from tinet.graph import knn_graph, laplacian

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def record(name, passed, detail=""):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rel_dev(a, b):
    """Max over columns of max|a - b| / max|b| (columns that are all zero use absolute error)."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    scale = np.abs(b).max(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return float((np.abs(a - b).max(axis=0) / scale).max())


def random_cloud(rng, n):
    return rng.normal(size=(n, 3))


def sym_laplacian(points, k):
    return laplacian(knn_graph(points, k), "symmetric_normalized")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(**kw):
    from tinet.model import ModelConfig

    base = dict(
        n_classes=2,
        graph_k=8,
        ti_channels=4,
        gcn_widths=(6, 8),
        cheb_orders=(3, 2),
        pool_after=(),
        pool_k=4,
        pool_m=3,
        dense_widths=(8,),
        keep_prob=1.0,
        raw_scaling="none",
        l2=1e-3,
    )
    base.update(kw)
    return ModelConfig(**base)
