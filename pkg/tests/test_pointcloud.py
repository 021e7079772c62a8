import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinet.exceptions import DataError, DegenerateCloudError
from tinet.pointcloud import (
    SHAPE_KINDS,
    PointCloud,
    RigidTransform,
    SyntheticShapeSpec,
    apply_transform,
    generate_shape,
    jitter,
    load_cloud,
    load_dataset,
    normalize_unit_sphere,
    random_rotation,
    read_manifest,
    recenter,
    shape_dataset,
    write_manifest,
    write_xyz,
)
from tinet.rng import make_rng


def pdist(p):
    return np.linalg.norm(p[:, None] - p[None], axis=2)


class TestIO:
    def test_xyz_parse(self, tmp_path):
        f = tmp_path / "a.xyz"
        f.write_text("0 0 0\n2 0 0\n0 1 0\n")
        cloud = load_cloud(f)
        assert cloud.n_points == 3
        assert np.array_equal(cloud.points, [[0, 0, 0], [2, 0, 0], [0, 1, 0]])

    def test_off_cube_faces_ignored(self, tmp_path):
        verts = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        faces = ["4 0 1 3 2", "4 4 5 7 6", "4 0 1 5 4", "4 2 3 7 6", "4 0 2 6 4", "4 1 3 7 5"]
        text = "OFF\n8 6 0\n" + "".join("%d %d %d\n" % v for v in verts) + "\n".join(faces) + "\n"
        f = tmp_path / "cube.off"
        f.write_text(text)
        cloud = load_cloud(f)
        assert cloud.n_points == 8
        assert np.array_equal(cloud.points, verts)

    def test_nan_reports_line(self, tmp_path):
        f = tmp_path / "bad.xyz"
        f.write_text("0 0 0\n1 NaN 0\n")
        with pytest.raises(DataError, match=":2"):
            load_cloud(f)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_cloud(tmp_path / "nope.xyz")

    def test_xyz_round_trip_bitwise(self, tmp_path, rng):
        pts = rng.normal(size=(20, 3))
        write_xyz(pts, tmp_path / "r.xyz")
        assert np.array_equal(load_cloud(tmp_path / "r.xyz").points, pts)

    def test_manifest_round_trip(self, tmp_path, rng):
        entries = []
        for i in range(3):
            p = tmp_path / f"c{i}.xyz"
            write_xyz(rng.normal(size=(5, 3)), p)
            entries.append((p, i % 2))
        write_manifest(tmp_path / "m.txt", entries)
        assert [(p.name, y) for p, y in read_manifest(tmp_path / "m.txt")] == [("c0.xyz", 0), ("c1.xyz", 1), ("c2.xyz", 0)]
        clouds, labels = load_dataset(tmp_path / "m.txt")
        assert len(clouds) == 3 and labels.tolist() == [0, 1, 0]

    def test_points_are_read_only(self):
        cloud = PointCloud(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0


class TestGeometry:
    def test_recenter(self):
        assert np.array_equal(recenter(np.array([[0.0, 0, 0], [2, 0, 0]])), [[-1, 0, 0], [1, 0, 0]])

    def test_recenter_centered_is_identity(self):
        p = np.array([[-1.0, 0, 0], [1, 0, 0]])
        assert np.array_equal(recenter(p), p)

    def test_normalize(self):
        assert np.array_equal(normalize_unit_sphere(np.array([[-1.0, 0, 0], [1, 0, 0]])), [[-1, 0, 0], [1, 0, 0]])
        assert np.array_equal(normalize_unit_sphere(np.array([[-2.0, 0, 0], [2, 0, 0]])), [[-1, 0, 0], [1, 0, 0]])

    def test_normalize_degenerate(self):
        with pytest.raises(DegenerateCloudError):
            normalize_unit_sphere(np.ones((4, 3)))

    @pytest.mark.parametrize("mode", ["azimuthal_z", "uniform_so3"])
    def test_rotation_is_proper(self, mode):
        rng = make_rng(4)
        for _ in range(50):
            R = random_rotation(rng, mode).rotation
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(R) - 1) < 1e-12

    def test_azimuthal_fixes_z(self):
        R = random_rotation(make_rng(5), "z").rotation
        np.testing.assert_allclose(R @ [0, 0, 1], [0, 0, 1], atol=1e-12)

    def test_so3_mean_entry(self):
        rng = make_rng(6)
        vals = [random_rotation(rng, "so3").rotation[0, 0] for _ in range(100_000)]
        assert -0.02 < np.mean(vals) < 0.02

    def test_apply_transform(self):
        c = np.cos(np.pi / 2)
        R = np.array([[c, -1.0, 0], [1.0, c, 0], [0, 0, 1]])
        np.testing.assert_allclose(apply_transform(np.array([[1.0, 0, 0]]), RigidTransform(R)), [[0, 1, 0]], atol=1e-12)
        p = np.random.default_rng(0).normal(size=(7, 3))
        assert np.array_equal(apply_transform(p, RigidTransform.identity()), p)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 40))
    def test_rigid_motion_preserves_distances(self, seed, n):
        rng = make_rng(seed)
        p = rng.normal(size=(n, 3))
        t = RigidTransform(random_rotation(rng).rotation, rng.normal(size=3))
        np.testing.assert_allclose(pdist(apply_transform(p, t)), pdist(p), atol=1e-12)
        np.testing.assert_allclose(pdist(recenter(p)), pdist(p), atol=1e-12)

    def test_jitter(self):
        p = np.zeros((10_000, 3))
        assert np.array_equal(jitter(p, 0.0, 1), p)
        out = jitter(p, 0.01, 1)
        assert 0.0095 <= (out - p).std() <= 0.0105
        assert np.array_equal(out, jitter(p, 0.01, 1))
        with pytest.raises(ValueError):
            jitter(p, -1.0, 1)


class TestShapes:
    def test_sphere_on_surface(self):
        p = generate_shape(SyntheticShapeSpec("sphere", 512)).points
        np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-9)

    def test_cube_on_surface(self):
        p = generate_shape(SyntheticShapeSpec("cube", 512)).points
        half = np.abs(p).max()
        assert np.all(np.abs(np.abs(p) - half).min(axis=1) < 1e-9)

    @pytest.mark.parametrize("kind", SHAPE_KINDS)
    def test_deterministic_and_normalized(self, kind):
        spec = SyntheticShapeSpec(kind, 300, seed=7)
        a, b = generate_shape(spec).points, generate_shape(spec).points
        assert np.array_equal(a, b)
        assert a.shape == (300, 3)
        np.testing.assert_allclose(np.linalg.norm(a, axis=1).max(), 1.0, rtol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_shape(SyntheticShapeSpec("blob", 64))

    def test_dataset_splits_disjoint(self):
        a, ya = shape_dataset(["sphere", "cone"], 3, 32, seed=0)
        b, _ = shape_dataset(["sphere", "cone"], 3, 32, seed=0, offset=100)
        assert ya.tolist() == [0, 0, 0, 1, 1, 1]
        assert not any(np.array_equal(x.points, y.points) for x in a for y in b)
