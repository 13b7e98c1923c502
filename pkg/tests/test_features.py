import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import fibonacci_sphere, planar_grid, random_rotation

from regkit import (
    DescriptorSet,
    PointCloud,
    RigidTransform,
    apply_transform,
    compute_fpfh,
    curvature_weighted_sample,
    estimate_normals,
    match_descriptors,
)
from regkit.errors import NoCorrespondences
from regkit.features import dump_correspondences_csv


def _cloud_with_curvatures(points, curvatures):
    return PointCloud(np.asarray(points, dtype=float), curvatures=np.asarray(curvatures, dtype=float))


class TestCurvatureWeightedSample:
    def test_deterministic_given_seed(self, rng):
        cloud = _cloud_with_curvatures(rng.normal(size=(50, 3)), rng.uniform(0, 0.3, 50))
        a = curvature_weighted_sample(cloud, 10, seed=7)
        b = curvature_weighted_sample(cloud, 10, seed=7)
        assert np.array_equal(a, b)
        assert len(np.unique(a)) == 10

    def test_two_point_selection_frequency(self):
        cloud = _cloud_with_curvatures([[0, 0, 0], [10, 0, 0]], [0.3, 0.1])
        hits = sum(
            curvature_weighted_sample(cloud, 1, seed=s)[0] == 0 for s in range(10_000)
        )
        assert hits / 10_000 == pytest.approx(0.75, abs=0.02)

    def test_zero_curvature_uniform_fallback(self, rng):
        cloud = _cloud_with_curvatures(rng.normal(size=(20, 3)), np.zeros(20))
        picked = curvature_weighted_sample(cloud, 5, seed=3)
        assert len(picked) == 5  # no division by zero

    def test_constant_curvature_uniform_chi2(self, rng):
        n = 8
        cloud = _cloud_with_curvatures(rng.normal(size=(n, 3)), np.full(n, 0.2))
        counts = np.zeros(n)
        for s in range(10_000):
            counts[curvature_weighted_sample(cloud, 1, seed=s)[0]] += 1
        _, p = chisquare(counts)
        assert p > 0.01

    def test_chi2_matches_curvature_distribution(self, rng):
        n = 6
        curv = np.array([0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
        cloud = _cloud_with_curvatures(rng.normal(size=(n, 3)), curv)
        counts = np.zeros(n)
        draws = 10_000
        for s in range(draws):
            counts[curvature_weighted_sample(cloud, 1, seed=s)[0]] += 1
        expected = draws * curv / curv.sum()
        _, p = chisquare(counts, expected)
        assert p > 0.01

    def test_distribution_invariant_to_curvature_scaling(self, rng):
        base = rng.uniform(0.01, 0.3, 30)
        pts = rng.normal(size=(30, 3))
        a = curvature_weighted_sample(_cloud_with_curvatures(pts, base), 10, seed=11)
        b = curvature_weighted_sample(_cloud_with_curvatures(pts, base * 7.3), 10, seed=11)
        assert np.array_equal(a, b)


def _sphere_with_normals(n=600, radius=30.0):
    cloud = PointCloud(fibonacci_sphere(n, radius=radius))
    return estimate_normals(cloud, k=10, viewpoint=(0.0, 0.0, 0.0))


class TestComputeFpfh:
    def test_rigid_invariance(self, rng):
        cloud = _sphere_with_normals()
        rot = random_rotation(rng)
        moved = apply_transform(cloud, RigidTransform(rot, rng.normal(size=3) * 40))
        idx = np.arange(0, 600, 13)
        d0 = compute_fpfh(cloud, idx, radius=8.0)
        d1 = compute_fpfh(moved, idx, radius=8.0)
        l1 = np.abs(d0.descriptors - d1.descriptors).sum(axis=1)
        assert np.all(l1 < 1e-6)

    def test_flat_plane_interior_identical(self):
        cloud = estimate_normals(PointCloud(planar_grid(30, 30, pitch=1.0)), k=8)
        interior = np.flatnonzero(
            (cloud.points[:, 0] > 8) & (cloud.points[:, 0] < 21)
            & (cloud.points[:, 1] > 8) & (cloud.points[:, 1] < 21)
        )
        desc = compute_fpfh(cloud, interior, radius=3.5)
        spread = np.abs(desc.descriptors - desc.descriptors[0]).max()
        assert spread < 1e-6

    def test_isolated_points_flagged(self):
        cloud = _sphere_with_normals(n=100)
        desc = compute_fpfh(cloud, np.arange(100), radius=1e-6)
        assert np.all(desc.isolated)
        assert np.allclose(desc.descriptors, 0.0)


def _descriptor_set(descriptors):
    descriptors = np.asarray(descriptors, dtype=float)
    return DescriptorSet(
        descriptors=descriptors,
        source_indices=np.arange(len(descriptors)),
        isolated=np.zeros(len(descriptors), dtype=bool),
    )


def _random_descriptors(rng, n):
    d = rng.uniform(0, 1, size=(n, 33))
    return d / d.sum(axis=1, keepdims=True)


class TestMatchDescriptors:
    def test_identical_sets_identity_pairing(self, rng):
        desc = _random_descriptors(rng, 40)
        corr = match_descriptors(_descriptor_set(desc), _descriptor_set(desc), tau=0.5)
        assert len(corr) == 40
        assert np.array_equal(corr.pairs[:, 0], corr.pairs[:, 1])
        assert np.allclose(corr.distances, 0.0)

    def test_disjoint_clusters_no_correspondences(self, rng):
        a = _random_descriptors(rng, 10)
        b = a + 10.0  # farther than any sane tau
        with pytest.raises(NoCorrespondences):
            match_descriptors(_descriptor_set(a), _descriptor_set(b), tau=0.5)

    def test_decoys_rejected_against_brute_force(self, rng):
        true = _random_descriptors(rng, 100)
        jitter = np.clip(true + rng.normal(0, 1e-4, true.shape), 0.0, None)
        decoys = _random_descriptors(rng, 100) + 5.0
        target = _descriptor_set(np.vstack([jitter, decoys]))
        source = _descriptor_set(true)
        tau = 0.05
        corr = match_descriptors(source, target, tau=tau)
        # Brute-force oracle: full distance matrix, mutual NN below tau.
        dist = np.linalg.norm(
            source.descriptors[:, None, :] - target.descriptors[None, :, :], axis=2
        )
        fwd = dist.argmin(axis=1)
        back = dist.argmin(axis=0)
        expected = {
            (i, fwd[i])
            for i in range(100)
            if dist[i, fwd[i]] < tau and back[fwd[i]] == i
        }
        assert expected == set(map(tuple, corr.pairs))
        assert len(corr) == 100

    def test_symmetry_up_to_orientation(self, rng):
        a = _descriptor_set(_random_descriptors(rng, 30))
        b = _descriptor_set(_random_descriptors(rng, 30) * 0.98)
        tau = 2.0
        ab = match_descriptors(a, b, tau=tau)
        ba = match_descriptors(b, a, tau=tau)
        assert {(i, j) for i, j in ab.pairs} == {(j, i) for i, j in ba.pairs}

    def test_weights_positive_finite_and_curvature_weighted(self, rng):
        desc = _random_descriptors(rng, 20)
        curv = rng.uniform(0, 0.3, 20)
        corr = match_descriptors(
            _descriptor_set(desc), _descriptor_set(desc), tau=0.5, source_curvatures=curv
        )
        assert np.all(np.isfinite(corr.weights))
        assert np.all(corr.weights > 0)
        expected = 1.0 + curv / curv.mean()  # zero descriptor distance
        assert np.allclose(corr.weights, expected[corr.pairs[:, 0]])

    def test_csv_dump(self, tmp_path, rng):
        desc = _random_descriptors(rng, 10)
        corr = match_descriptors(_descriptor_set(desc), _descriptor_set(desc), tau=0.5)
        path = tmp_path / "corr.csv"
        dump_correspondences_csv(corr, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "source_index,target_index,weight,descriptor_distance"
        assert len(lines) == 11
