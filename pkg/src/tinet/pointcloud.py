"""Point cloud containers, file formats, rigid motions and synthetic shapes."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import DataError, DegenerateCloudError
from .rng import as_rng, make_rng, normal, uniform

__all__ = [
    "PointCloud",
    "RigidTransform",
    "SyntheticShapeSpec",
    "SHAPE_KINDS",
    "load_cloud",
    "write_xyz",
    "recenter",
    "normalize_unit_sphere",
    "random_rotation",
    "apply_transform",
    "jitter",
    "generate_shape",
    "read_manifest",
    "write_manifest",
    "load_dataset",
]

SHAPE_KINDS = ("sphere", "cube", "cylinder", "cone", "torus")


def _frozen(a, ndim=None) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    if ndim is not None and a.ndim != ndim:
        raise DataError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable N x 3 point set with optional per-point attributes and label."""

    points: np.ndarray
    attributes: Optional[np.ndarray] = None
    label: Optional[int] = None

    def __post_init__(self):
        pts = _frozen(self.points, ndim=2)
        if pts.shape[1] != 3:
            raise DataError(f"points must be N x 3, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.attributes is not None:
            attrs = _frozen(self.attributes, ndim=2)
            if attrs.shape[0] != pts.shape[0]:
                raise DataError("attribute rows must match point count")
            object.__setattr__(self, "attributes", attrs)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def replace(self, points) -> "PointCloud":
        return PointCloud(points, self.attributes, self.label)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation)
        if r.shape != (3, 3) or t.shape != (3,):
            raise DataError("rotation must be 3x3 and translation a 3-vector")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3))


@dataclass(frozen=True)
class SyntheticShapeSpec:
    kind: str
    n_points: int = 1024
    seed: int = 0
    jitter: float = 0.0


def _as_points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


# --------------------------------------------------------------------------- io


def _parse_floats(tokens, lineno, path):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric token in {' '.join(tokens)!r}") from None
    if not all(np.isfinite(vals)):
        raise DataError(f"{path}:{lineno}: non-finite value")
    return vals


def _read_xyz(path, lines):
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        tokens = s.split()
        if len(tokens) < 3:
            raise DataError(f"{path}:{lineno}: expected at least 3 columns, got {len(tokens)}")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(tokens)}")
        rows.append(_parse_floats(tokens, lineno, path))
    if not rows:
        return np.zeros((0, 3)), None
    data = np.array(rows)
    attrs = data[:, 3:] if data.shape[1] > 3 else None
    return data[:, :3], attrs


def _read_off(path, lines):
    # yield (lineno, tokens) for non-blank, non-comment lines
    content = ((i, ln.split("#", 1)[0].split()) for i, ln in enumerate(lines, start=1))
    content = ((i, t) for i, t in content if t)
    try:
        lineno, tokens = next(content)
    except StopIteration:
        raise DataError(f"{path}:1: empty file, expected 'OFF' header") from None
    if tokens[0].upper() != "OFF":
        raise DataError(f"{path}:{lineno}: malformed header {tokens[0]!r}, expected 'OFF'")
    counts = tokens[1:]
    if not counts:
        try:
            lineno, counts = next(content)
        except StopIteration:
            raise DataError(f"{path}:{lineno}: missing counts line") from None
    if len(counts) != 3:
        raise DataError(f"{path}:{lineno}: counts line must hold 'V F E'")
    try:
        n_verts = int(counts[0])
        int(counts[1]), int(counts[2])
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-integer counts line") from None
    verts = []
    for _ in range(n_verts):
        try:
            lineno, tokens = next(content)
        except StopIteration:
            raise DataError(f"{path}:{lineno}: expected {n_verts} vertices, found {len(verts)}") from None
        if len(tokens) < 3:
            raise DataError(f"{path}:{lineno}: vertex line needs 3 coordinates")
        verts.append(_parse_floats(tokens[:3], lineno, path))
    return np.array(verts).reshape(-1, 3), None


def load_cloud(path, format: Optional[str] = None, label: Optional[int] = None) -> PointCloud:
    """Read an XYZ or OFF file. OFF faces are skipped.

    ``format`` defaults to the file extension. Every parse failure raises
    :class:`DataError` carrying the 1-based line number.
    """
    path = os.fspath(path)
    fmt = (format or Path(path).suffix.lstrip(".") or "xyz").lower()
    if fmt not in ("xyz", "off"):
        raise DataError(f"unsupported cloud format {fmt!r}")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    pts, attrs = (_read_xyz if fmt == "xyz" else _read_off)(path, lines)
    if pts.shape[0] < 2:
        raise DataError(f"{path}: a cloud needs at least 2 points, got {pts.shape[0]}")
    return PointCloud(pts, attrs, label)


def write_xyz(cloud, path) -> None:
    """Write coordinates (and attributes) at 17 significant digits."""
    pts = _as_points(cloud)
    data = pts
    if isinstance(cloud, PointCloud) and cloud.attributes is not None:
        data = np.hstack([pts, cloud.attributes])
    with open(path, "w", encoding="utf-8") as fh:
        for row in data:
            fh.write(" ".join("%.17g" % v for v in row))
            fh.write("\n")


def read_manifest(path) -> list:
    """Parse ``path<TAB>label`` lines. Relative paths resolve against the manifest's folder."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'path<TAB>label'")
        try:
            label = int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: label must be an integer") from None
        if label < 0:
            raise DataError(f"{path}:{lineno}: negative label")
        p = Path(parts[0])
        entries.append((p if p.is_absolute() else path.parent / p, label))
    return entries


def write_manifest(path, entries: Iterable) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for p, label in entries:
            p = Path(p)
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            fh.write(f"{p.as_posix()}\t{int(label)}\n")


def load_dataset(manifest) -> tuple:
    """Load every cloud of a manifest. Returns ``(clouds, labels)``."""
    entries = read_manifest(manifest)
    if not entries:
        raise DataError(f"manifest {manifest} lists no clouds")
    clouds = [load_cloud(p, label=y) for p, y in entries]
    return clouds, np.array([y for _, y in entries], dtype=np.int64)


# ----------------------------------------------------------------- geometry ops


def recenter(cloud):
    """Subtract the centroid. Accepts a PointCloud or a raw N x 3 array."""
    pts = _as_points(cloud)
    out = pts - pts.mean(axis=0)
    return cloud.replace(out) if isinstance(cloud, PointCloud) else out


def normalize_unit_sphere(cloud):
    """Recenter, then scale so the farthest point has norm 1."""
    pts = recenter(_as_points(cloud))
    scale = np.sqrt((pts * pts).sum(axis=1)).max()
    if not scale > 0:
        raise DegenerateCloudError("cannot normalize a cloud with zero spread")
    out = pts / scale
    return cloud.replace(out) if isinstance(cloud, PointCloud) else out


def _quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng, mode: str = "uniform_so3") -> RigidTransform:
    """Draw a rotation.

    ``azimuthal_z`` (alias ``z``): angle uniform in [0, 2*pi) about the z axis.
    ``uniform_so3`` (alias ``so3``): Haar-uniform, from a unit quaternion
    ``(w, x, y, z)`` built from 4 consecutive Box-Muller normals.
    ``none`` returns the identity without consuming randomness.
    """
    rng = as_rng(rng)
    if mode in ("none", "identity"):
        return RigidTransform.identity()
    if mode in ("azimuthal_z", "z"):
        a = 2.0 * np.pi * uniform(rng, 1)[0]
        c, s = np.cos(a), np.sin(a)
        return RigidTransform(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))
    if mode in ("uniform_so3", "so3"):
        q = normal(rng, 4)
        q /= np.linalg.norm(q)
        return RigidTransform(_quat_to_matrix(q))
    raise ValueError(f"unknown rotation mode {mode!r}")


def apply_transform(cloud, t: RigidTransform):
    """Map every point p to ``rotation @ p + translation``."""
    pts = _as_points(cloud)
    out = pts @ t.rotation.T + t.translation
    return cloud.replace(out) if isinstance(cloud, PointCloud) else out


def jitter(cloud, sigma: float, seed):
    """Add i.i.d. N(0, sigma^2) noise to every coordinate."""
    if sigma < 0:
        raise ValueError("jitter sigma must be non-negative")
    pts = _as_points(cloud)
    if sigma == 0:
        out = pts.copy()
    else:
        out = pts + sigma * normal(as_rng(seed), pts.shape)
    return cloud.replace(out) if isinstance(cloud, PointCloud) else out


# ------------------------------------------------------------- synthetic shapes

_CYL_RADIUS = 0.5
_CYL_HALF_HEIGHT = 1.0
_CONE_RADIUS = 1.0
_CONE_HEIGHT = 2.0
_TORUS_MAJOR = 1.0
_TORUS_MINOR = 0.4


def _sample_sphere(rng, n):
    v = normal(rng, (n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_cube(rng, n):
    # 6 faces of [-1, 1]^3 have equal area
    u = uniform(rng, (n, 3))
    face = np.minimum((6 * u[:, 0]).astype(int), 5)
    axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    pts = np.empty((n, 3))
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = 2 * u[sel][:, 1:] - 1
    return pts


def _disk(u_r, u_t, radius):
    r = radius * np.sqrt(u_r)
    t = 2 * np.pi * u_t
    return r * np.cos(t), r * np.sin(t)


def _sample_cylinder(rng, n):
    r, h = _CYL_RADIUS, _CYL_HALF_HEIGHT
    side = 2 * np.pi * r * (2 * h)
    cap = np.pi * r * r
    u = uniform(rng, (n, 3))
    pick = u[:, 0] * (side + 2 * cap)
    pts = np.empty((n, 3))
    lat = pick < side
    t = 2 * np.pi * u[lat, 1]
    pts[lat] = np.column_stack([r * np.cos(t), r * np.sin(t), h * (2 * u[lat, 2] - 1)])
    caps = ~lat
    x, y = _disk(u[caps, 1], u[caps, 2], r)
    z = np.where(pick[caps] < side + cap, h, -h)
    pts[caps] = np.column_stack([x, y, z])
    return pts


def _sample_cone(rng, n):
    R, H = _CONE_RADIUS, _CONE_HEIGHT
    slant = np.hypot(R, H)
    side, base = np.pi * R * slant, np.pi * R * R
    u = uniform(rng, (n, 3))
    lat = u[:, 0] * (side + base) < side
    pts = np.empty((n, 3))
    # lateral area element grows linearly with distance from the apex
    s = np.sqrt(u[lat, 1])
    t = 2 * np.pi * u[lat, 2]
    pts[lat] = np.column_stack([s * R * np.cos(t), s * R * np.sin(t), H / 2 - s * H])
    x, y = _disk(u[~lat, 1], u[~lat, 2], R)
    pts[~lat] = np.column_stack([x, y, np.full(x.shape, -H / 2)])
    return pts


def _sample_torus(rng, n):
    R, r = _TORUS_MAJOR, _TORUS_MINOR
    out = np.empty((0, 3))
    while out.shape[0] < n:
        m = 2 * (n - out.shape[0]) + 16
        u = uniform(rng, (m, 3))
        phi = 2 * np.pi * u[:, 0]
        keep = u[:, 2] * (R + r) < R + r * np.cos(phi)
        phi, theta = phi[keep], 2 * np.pi * u[keep, 1]
        ring = R + r * np.cos(phi)
        pts = np.column_stack([ring * np.cos(theta), ring * np.sin(theta), r * np.sin(phi)])
        out = np.vstack([out, pts])
    return out[:n]


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
}
_CENTRALLY_SYMMETRIC = {"sphere", "cube", "cylinder", "torus"}


def generate_shape(spec: SyntheticShapeSpec, label: Optional[int] = None) -> PointCloud:
    """Sample ``spec.n_points`` points uniformly on a canonical surface.

    Canonical surfaces (before normalization): sphere of radius 1; cube
    ``[-1, 1]^3`` (face picked uniformly, all faces have equal area);
    cylinder of radius 0.5 and height 2 including both caps; cone of base
    radius 1 and height 2 including the base disk; torus with major radius 1
    and minor radius 0.4 (tube angle accepted with probability
    ``(R + r cos phi) / (R + r)``). Lateral/cap choice is area weighted.

    Centrally symmetric shapes are sampled as antipodal pairs ``(p, -p)`` so
    that the sample centroid is exactly the shape's center; each point is
    still marginally uniform on the surface. The result is passed through
    :func:`normalize_unit_sphere` and then jittered with the stream
    ``(seed, 1)``.
    """
    if spec.kind not in _SAMPLERS:
        raise ValueError(f"unknown shape kind {spec.kind!r}; expected one of {SHAPE_KINDS}")
    if spec.n_points < 8:
        raise ValueError("generate_shape needs at least 8 points")
    rng = make_rng(spec.seed, 0)
    n = spec.n_points
    if spec.kind in _CENTRALLY_SYMMETRIC:
        half = _SAMPLERS[spec.kind](rng, (n + 1) // 2)
        pts = np.vstack([half, -half])[:n]
    else:
        pts = _SAMPLERS[spec.kind](rng, n)
    pts = normalize_unit_sphere(pts)
    pts = jitter(pts, spec.jitter, make_rng(spec.seed, 1))
    return PointCloud(pts, label=label)


def shape_dataset(
    classes: Sequence[str],
    per_class: int,
    n_points: int,
    seed: int,
    jitter_sigma: float = 0.0,
    offset: int = 0,
) -> tuple:
    """Balanced in-memory dataset: ``per_class`` clouds of each kind in ``classes``.

    Cloud ``i`` of class ``c`` uses seed derived from ``(seed, c, offset + i)``
    so train/test splits with different ``offset`` never share samples.
    """
    clouds, labels = [], []
    for c, kind in enumerate(classes):
        for i in range(per_class):
            sub = int(np.random.SeedSequence([seed, c, offset + i]).generate_state(1, np.uint64)[0])
            spec = SyntheticShapeSpec(kind, n_points, sub, jitter_sigma)
            clouds.append(generate_shape(spec, label=c))
            labels.append(c)
    return clouds, np.array(labels, dtype=np.int64)
