import numpy as np
import pytest

from conftest import fibonacci_sphere, planar_grid, random_rotation
from oracles import brute_force_voxel_centroids, horn_align

from regkit import (
    PointCloud,
    RigidTransform,
    alignment_rmse,
    apply_transform,
    estimate_curvature,
    estimate_normals,
    fit_plane_least_squares,
    kabsch_align,
    project_onto_plane,
    voxel_downsample,
)
from regkit.errors import DegenerateInput
from regkit.geometry import rotation_angle_deg, rotation_geodesic_deg


class TestRigidTransform:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # reflection
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3), np.zeros(3), scale=0.0)

    def test_compose_inverse_roundtrip(self, rng):
        rot = random_rotation(rng)
        t = RigidTransform(rot, rng.normal(size=3) * 10, scale=1.7)
        identity = t.compose(t.inverse())
        assert np.allclose(identity.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(identity.translation, 0.0, atol=1e-12)
        assert identity.scale == pytest.approx(1.0)

    def test_dict_roundtrip(self, rng):
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        again = RigidTransform.from_dict(t.to_dict())
        assert np.allclose(again.rotation, t.rotation)
        assert np.allclose(again.translation, t.translation)


class TestKabsch:
    def test_self_alignment_is_identity(self, rng):
        pts = rng.normal(size=(40, 3)) * 30
        t = kabsch_align(pts, pts)
        assert np.allclose(t.rotation, np.eye(3), atol=1e-12)
        assert np.linalg.norm(t.translation) < 1e-12

    def test_pure_translation(self, rng):
        pts = rng.normal(size=(25, 3)) * 30
        t = kabsch_align(pts, pts + np.array([10.0, 0.0, 0.0]))
        assert np.allclose(t.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(t.translation, [10.0, 0.0, 0.0], atol=1e-9)

    def test_random_rigid_recovery_matches_horn(self, rng):
        for _ in range(20):
            pts = rng.normal(size=(rng.integers(10, 200), 3)) * 40
            rot = random_rotation(rng)
            trans = rng.normal(size=3) * 25
            moved = pts @ rot.T + trans
            est = kabsch_align(pts, moved)
            assert rotation_geodesic_deg(est.rotation, rot) < np.degrees(1e-7)
            assert np.linalg.norm(est.translation - trans) < 1e-7
            h_rot, h_trans = horn_align(pts, moved)
            assert rotation_geodesic_deg(est.rotation, h_rot) < np.degrees(1e-7)
            assert np.linalg.norm(est.translation - h_trans) < 1e-7

    def test_collinear_points_degenerate(self):
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
        with pytest.raises(DegenerateInput):
            kabsch_align(pts, pts + 1.0)

    def test_rmse_exact_on_noiseless_pairs(self, rng):
        pts = rng.normal(size=(50, 3)) * 40
        rot = random_rotation(rng)
        trans = rng.normal(size=3) * 10
        moved = pts @ rot.T + trans
        est = kabsch_align(pts, moved)
        rmse = alignment_rmse(PointCloud(pts), PointCloud(moved), est)
        assert rmse <= 1e-6


class TestApplyTransform:
    def test_identity(self, sphere_cloud):
        out = apply_transform(sphere_cloud, RigidTransform.identity())
        assert np.allclose(out.points, sphere_cloud.points)

    def test_inverse_composition_roundtrip(self, sphere_cloud, rng):
        t = RigidTransform(random_rotation(rng), rng.normal(size=3) * 20)
        back = apply_transform(apply_transform(sphere_cloud, t), t.inverse())
        assert np.allclose(back.points, sphere_cloud.points, atol=1e-9)

    def test_scale_two_doubles_cube_corners(self):
        corners = np.array(
            [[x, y, z] for x in (0.0, 1) for y in (0.0, 1) for z in (0.0, 1)]
        )
        t = RigidTransform(np.eye(3), np.zeros(3), scale=2.0)
        out = apply_transform(PointCloud(corners), t)
        assert np.allclose(out.points, corners * 2.0)

    def test_normals_rotate_curvatures_carry(self, rng):
        normals = np.tile([0.0, 0.0, 1.0], (10, 1))
        cloud = PointCloud(
            rng.normal(size=(10, 3)), normals=normals, curvatures=np.full(10, 0.1)
        )
        rot = random_rotation(rng)
        out = apply_transform(cloud, RigidTransform(rot, np.zeros(3)))
        assert np.allclose(out.normals, normals @ rot.T)
        assert np.allclose(out.curvatures, 0.1)


class TestAlignmentRmse:
    def test_constant_residual(self):
        pts = planar_grid(5, 5)
        cloud = PointCloud(pts)
        shifted = PointCloud(pts + np.array([0.0, 0.0, 2.0]))
        assert alignment_rmse(cloud, shifted, RigidTransform.identity()) == pytest.approx(2.0)

    def test_hand_computed_mean_of_squares(self):
        src = PointCloud(np.array([[0.0, 0, 0], [10, 0, 0], [0, 10, 0]]))
        dst = PointCloud(
            np.array([[1.0, 0, 0], [10, 2, 0], [0, 10, 2]])
        )  # residuals 1, 2, 2
        rmse = alignment_rmse(src, dst, RigidTransform.identity())
        assert rmse == pytest.approx(np.sqrt(9.0 / 3.0))

    def test_nearest_neighbor_pairing(self, rng):
        pts = rng.normal(size=(100, 3)) * 10
        cloud = PointCloud(pts)
        subset = PointCloud(pts[::2])
        assert alignment_rmse(subset, cloud, RigidTransform.identity(), "nearest-neighbor") == 0.0


class TestVoxelDownsample:
    def test_under_target_returned_unchanged(self, rng):
        cloud = PointCloud(rng.normal(size=(10, 3)))
        out = voxel_downsample(cloud, 5000)
        assert out is cloud

    def test_count_within_ten_percent(self, rng):
        cloud = PointCloud(rng.normal(size=(100_000, 3)) * 100)
        out = voxel_downsample(cloud, 5000)
        assert 4500 <= len(out) <= 5500

    def test_grid_centroids_match_brute_force(self):
        cloud = PointCloud(planar_grid(100, 100, pitch=1.0))
        out = voxel_downsample(cloud, 100)
        assert 90 <= len(out) <= 110
        edge = out.meta["voxel_edge_mm"]
        origin = np.asarray(out.meta["voxel_origin"])
        expected = brute_force_voxel_centroids(cloud.points, origin, edge)
        got = {tuple(np.floor((p - origin) / edge).astype(int)): p for p in out.points}
        assert set(got) == set(expected)
        for key, centroid in expected.items():
            assert np.allclose(got[key], centroid, atol=1e-9)


class TestNormals:
    def test_planar_grid_normals_are_z(self, plane_cloud):
        out = estimate_normals(plane_cloud, k=8)
        nz = np.abs(out.normals[:, 2])
        assert np.all(np.abs(nz - 1.0) < 1e-6)

    def test_sphere_normals_radial(self):
        # Viewpoint at the center: normals orient toward it, i.e. inward.
        cloud = PointCloud(fibonacci_sphere(2000, radius=1.0))
        out = estimate_normals(cloud, k=10, viewpoint=(0.0, 0.0, 0.0))
        radial = cloud.points / np.linalg.norm(cloud.points, axis=1, keepdims=True)
        dots = np.einsum("ij,ij->i", out.normals, -radial)
        assert np.mean(dots > 0.99) >= 0.99

    def test_collinear_neighborhood_gives_null_normal(self):
        pts = np.column_stack([np.arange(4.0), np.zeros(4), np.zeros(4)])
        out = estimate_normals(PointCloud(pts), k=3)
        assert np.all(np.isnan(out.normals))


class TestCurvature:
    def test_plane_curvature_zero(self, plane_cloud):
        out = estimate_curvature(plane_cloud, k=8)
        assert np.all(out.curvatures < 1e-9)

    def test_roof_edge_exceeds_face(self):
        # Two half-planes meeting at a 90 degree roof along y.
        xs = np.linspace(0, 10, 21)
        ys = np.linspace(0, 10, 21)
        gx, gy = np.meshgrid(xs, ys)
        left = np.column_stack([-gx.ravel(), gy.ravel(), gx.ravel()])
        right = np.column_stack([gx.ravel(), gy.ravel(), gx.ravel()])
        cloud = PointCloud(np.vstack([left, right]))
        out = estimate_curvature(cloud, k=10)
        on_edge = np.abs(cloud.points[:, 0]) < 1e-9
        face = np.abs(cloud.points[:, 0]) > 5.0
        assert out.curvatures[on_edge].mean() > 2.0 * out.curvatures[face].mean()

    def test_sphere_curvature_roughly_constant(self):
        cloud = PointCloud(fibonacci_sphere(3000, radius=30.0))
        out = estimate_curvature(cloud, k=20)
        cv = out.curvatures.std() / out.curvatures.mean()
        assert cv < 0.2

    def test_range_invariant(self, rng):
        cloud = PointCloud(rng.normal(size=(500, 3)) * 10)
        out = estimate_curvature(cloud, k=12)
        assert np.all(out.curvatures >= 0.0)
        assert np.all(out.curvatures <= 1.0 / 3.0 + 1e-12)


class TestPlane:
    def test_exact_plane_z5(self):
        pts = planar_grid(10, 10, pitch=1.0, z=5.0)
        plane = fit_plane_least_squares(pts)
        coeffs = np.array([plane.a, plane.b, plane.c, plane.d])
        expected = np.array([0.0, 0.0, 1.0, -5.0])
        assert np.allclose(coeffs, expected, atol=1e-9) or np.allclose(
            coeffs, -expected, atol=1e-9
        )

    def test_noisy_tilted_plane_recovery(self, rng):
        xs = rng.uniform(-10, 10, 500)
        ys = rng.uniform(-10, 10, 500)
        zs = 2.0 * xs + 3.0 + rng.normal(0, 0.01, 500)
        plane = fit_plane_least_squares(np.column_stack([xs, ys, zs]))
        truth = np.array([2.0, 0.0, -1.0, 3.0])
        truth = truth / np.linalg.norm(truth[:3])
        got = np.array([plane.a, plane.b, plane.c, plane.d])
        if got[:3] @ truth[:3] < 0:
            got = -got
        assert np.allclose(got, truth, atol=1e-2)

    def test_collinear_degenerate(self):
        pts = np.array([[0.0, 0, 0], [1, 1, 1], [2, 2, 2]])
        with pytest.raises(DegenerateInput):
            fit_plane_least_squares(pts)

    def test_projection_identities(self, rng):
        plane = fit_plane_least_squares(planar_grid(5, 5, z=0.0))
        on_plane = np.array([3.0, 4.0, 0.0])
        assert np.allclose(project_onto_plane(on_plane, plane), on_plane, atol=1e-12)
        assert np.allclose(
            project_onto_plane(np.array([0.0, 0.0, 7.0]), plane), [0.0, 0.0, 0.0], atol=1e-12
        )
        for _ in range(10):
            p = rng.normal(size=3) * 20
            once = project_onto_plane(p, plane)
            assert np.allclose(project_onto_plane(once, plane), once, atol=1e-12)
            assert abs(plane.signed_distance(once)[0]) < 1e-9

    def test_residual_parallel_to_normal(self, rng):
        pts = rng.normal(size=(50, 3)) * 10
        pts[:, 2] = 0.3 * pts[:, 0] - 0.2 * pts[:, 1] + 4.0
        plane = fit_plane_least_squares(pts)
        for _ in range(20):
            p = rng.normal(size=3) * 15
            resid = p - project_onto_plane(p, plane)
            cross = np.cross(resid, plane.normal)
            assert np.linalg.norm(cross) < 1e-9 * max(np.linalg.norm(resid), 1.0)
