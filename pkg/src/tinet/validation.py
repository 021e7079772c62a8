"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError
from .pointcloud import PointCloud


def check_cloud(cloud, min_points: int = 2) -> np.ndarray:
    """Return the cloud as a finite float64 N x 3 array."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"a cloud must be an N x 3 array, got shape {pts.shape}")
    if pts.shape[0] < min_points:
        raise DataError(f"a cloud needs at least {min_points} points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise DataError("cloud coordinates must be finite")
    return pts


def check_clouds(X, min_points: int = 2) -> list:
    """Accept a (n_samples, N, 3) array or a sequence of clouds of varying N."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [check_cloud(c, min_points) for c in X]
    if isinstance(X, (PointCloud, np.ndarray)) and np.ndim(getattr(X, "points", X)) == 2:
        raise DataError("expected a collection of clouds, got a single cloud")
    clouds = [check_cloud(c, min_points) for c in X]
    if not clouds:
        raise DataError("empty collection of clouds")
    return clouds


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise DataError(f"expected {n_samples} labels, got shape {y.shape}")
    return y
