"""
Unit tests for plane removal, connectability clustering and proposal masks.
"""

import numpy as np
from django.test import SimpleTestCase

from recognition.exceptions import DataError
from recognition.geometry import CameraModel, PointCloud
from recognition.objectness import (
    ClusteringParams,
    PlaneRemovalParams,
    cluster_proposals,
    connectable,
    connectable_pairs,
    detect_objects,
    proposal_to_mask,
    rasterize_proposal,
    remove_planes,
    voxelize,
)
from recognition.scenes import generate_scene


def sphere_surface(rng, count, radius, center, intensity=128.0):
    """Points on a sphere with radial normals and a constant intensity."""
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return PointCloud(
        np.asarray(center) + radius * directions,
        intensities=np.full(count, intensity),
        normals=directions,
    )


def merge(*clouds):
    return PointCloud(
        np.vstack([c.points for c in clouds]),
        intensities=np.concatenate([c.intensities for c in clouds]),
        normals=np.vstack([c.normals for c in clouds]),
    )


def oracle_clusters(cloud, params):
    """Brute-force union-find over every pair of adjacent voxel representatives."""
    grid = voxelize(cloud, params.voxel_leaf)
    reps = grid.representatives
    count = len(grid.keys)
    parent = list(range(count))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(count):
        for b in range(a + 1, count):
            if np.abs(grid.keys[a] - grid.keys[b]).max() > 1:
                continue
            if connectable_pairs(reps.points[a], reps.points[b], reps.normals[a], reps.normals[b],
                                 reps.intensities[a], reps.intensities[b], params):
                parent[find(a)] = find(b)
    groups = {}
    for voxel in range(count):
        groups.setdefault(find(voxel), []).append(voxel)
    return {
        frozenset(np.concatenate([grid.members[v] for v in voxels]).tolist())
        for voxels in groups.values()
    }


class RemovePlanesTest(SimpleTestCase):
    """Test cases for RANSAC plane removal."""

    def setUp(self):
        """Set up test fixtures."""
        self.rng = np.random.default_rng(0)

    def test_table_with_ball(self):
        """Test that removing the table keeps the ball points."""
        plane = np.column_stack([self.rng.uniform(-0.5, 0.5, (10000, 2)), np.zeros(10000)])
        ball = sphere_surface(self.rng, 500, 0.1, (0.0, 0.0, 0.3)).points
        cloud = PointCloud(np.vstack([plane, ball]))
        params = PlaneRemovalParams(inlier_threshold=0.005, min_plane_fraction=0.3)

        remaining, planes = remove_planes(cloud, params, rng_seed=1)

        self.assertEqual(len(planes), 1)
        self.assertLessEqual(abs(len(remaining) - 500), 25)
        self.assertTrue(np.all(remaining.points[:, 2] > 0.15))

    def test_no_dominant_plane_is_a_no_op(self):
        """Test that a cloud without a dominant plane is returned unchanged."""
        cloud = PointCloud(self.rng.uniform(-1, 1, (2000, 3)))
        remaining, planes = remove_planes(cloud, PlaneRemovalParams(min_plane_fraction=0.3))
        self.assertEqual(planes, [])
        self.assertIs(remaining, cloud)

    def test_two_stacked_planes(self):
        """Test that two stacked planes are both removed."""
        lower = np.column_stack([self.rng.uniform(-1, 1, (4000, 2)), np.zeros(4000)])
        upper = np.column_stack([self.rng.uniform(-1, 1, (4000, 2)), np.full(4000, 0.5)])
        clutter = self.rng.uniform(-1, 1, (2000, 3)) * [1, 1, 0.2] + [0, 0, 1.5]
        cloud = PointCloud(np.vstack([lower, upper, clutter]))
        params = PlaneRemovalParams(inlier_threshold=0.005, min_plane_fraction=0.3, max_planes=2)

        remaining, planes = remove_planes(cloud, params, rng_seed=3)

        self.assertEqual(len(planes), 2)
        removed = np.sort(np.concatenate(planes))
        np.testing.assert_array_equal(removed, np.arange(8000))
        self.assertEqual(len(remaining), 2000)

    def test_deterministic_for_seed(self):
        """Test that one seed gives one result."""
        plane = np.column_stack([self.rng.uniform(-1, 1, (3000, 2)), self.rng.normal(0, 0.002, 3000)])
        cloud = PointCloud(np.vstack([plane, self.rng.uniform(-1, 1, (500, 3))]))
        _, first = remove_planes(cloud, rng_seed=7)
        _, second = remove_planes(cloud, rng_seed=7)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_empty_input(self):
        with self.assertRaisesMessage(DataError, 'empty input'):
            remove_planes(PointCloud(np.zeros((0, 3))))


class ConnectableTest(SimpleTestCase):
    """Test cases for the three-cue connectability predicate."""

    @staticmethod
    def pair(offset, intensity_gap, angle_deg):
        angle = np.radians(angle_deg)
        return PointCloud(
            [[0.0, 0.0, 0.0], [offset, 0.0, 0.0]],
            intensities=[100.0, 100.0 + intensity_gap],
            normals=[[0.0, 0.0, 1.0], [np.sin(angle), 0.0, np.cos(angle)]],
        )

    def test_reflexive(self):
        self.assertTrue(connectable(0, 0, self.pair(0.0, 0.0, 0.0)))

    def test_distance_gate_is_conjunctive(self):
        """Test that points too far apart never connect."""
        self.assertFalse(connectable(0, 1, self.pair(0.05, 0.0, 0.0)))

    def test_shape_cue_rescues_color(self):
        """Test that similar normals connect points of different intensity."""
        self.assertTrue(connectable(0, 1, self.pair(0.01, 50.0, 3.0)))

    def test_color_cue_rescues_shape(self):
        """Test that similar intensity connects points with different normals."""
        self.assertTrue(connectable(0, 1, self.pair(0.01, 2.0, 45.0)))

    def test_both_cues_fail(self):
        """Test that points differing in both cues do not connect."""
        self.assertFalse(connectable(0, 1, self.pair(0.01, 50.0, 45.0)))

    def test_unprepared_cloud(self):
        with self.assertRaisesMessage(DataError, 'unprepared cloud'):
            connectable(0, 1, PointCloud(np.zeros((2, 3))))


class ClusterProposalsTest(SimpleTestCase):
    """Test cases for connectability clustering."""

    def setUp(self):
        """Set up test fixtures."""
        self.rng = np.random.default_rng(4)

    def test_two_separated_balls(self):
        """Test that two separated balls give two proposals."""
        first = sphere_surface(self.rng, 3000, 0.05, (0.0, 0.0, 1.0))
        second = sphere_surface(self.rng, 3000, 0.05, (0.2, 0.0, 1.0))
        clusters = cluster_proposals(merge(first, second), ClusteringParams(sigma_d=0.02))

        self.assertEqual(len(clusters), 2)
        for cluster in clusters:
            from_first = np.count_nonzero(cluster < 3000)
            purity = max(from_first, len(cluster) - from_first) / len(cluster)
            self.assertGreaterEqual(purity, 0.99)

    def test_single_ball(self):
        clusters = cluster_proposals(sphere_surface(self.rng, 3000, 0.05, (0.0, 0.0, 1.0)))
        self.assertEqual(len(clusters), 1)
        self.assertGreaterEqual(len(clusters[0]), 0.99 * 3000)

    def test_small_ball_is_filtered(self):
        """Test that clusters below the size limits are dropped."""
        tiny = sphere_surface(self.rng, 10, 0.01, (0.0, 0.0, 1.0))
        self.assertEqual(cluster_proposals(tiny, ClusteringParams(min_cluster_points=30)), [])

    def test_empty_input(self):
        self.assertEqual(cluster_proposals(PointCloud(np.zeros((0, 3)))), [])

    def test_matches_union_find_oracle(self):
        """Test that clustering agrees with a union-find over voxel representatives."""
        params = ClusteringParams(voxel_leaf=0.05, sigma_d=0.08, min_cluster_points=0, min_cluster_extent=0.0)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            normals = rng.normal(size=(300, 3))
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            cloud = PointCloud(
                rng.uniform(0, 0.5, (300, 3)),
                intensities=rng.uniform(0, 30, 300),
                normals=normals,
            )
            clusters = cluster_proposals(cloud, params)
            self.assertEqual({frozenset(c.tolist()) for c in clusters}, oracle_clusters(cloud, params))
            for cluster in clusters:
                np.testing.assert_array_equal(cluster, np.sort(cluster))


class ProposalMaskTest(SimpleTestCase):
    """Test cases for proposal rasterization."""

    def setUp(self):
        """Set up test fixtures."""
        self.camera = CameraModel.from_parameters(500.0, (250.0, 250.0), 500, 500)

    def test_single_point_on_axis(self):
        """Test that one point on the axis gives a one-pixel mask."""
        proposal = proposal_to_mask([0], PointCloud([[0.0, 0.0, 1.0]]), self.camera)
        self.assertEqual(proposal.pixel_count, 1)
        self.assertTrue(proposal.mask[250, 250])
        self.assertEqual(proposal.bbox, (250, 250, 250, 250))

    def test_cube_face_width(self):
        """Test that a cube face covers the expected number of pixels."""
        grid = np.linspace(-0.05, 0.05, 41)
        xs, ys = np.meshgrid(grid, grid)
        points = np.column_stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
        proposal = proposal_to_mask(np.arange(len(points)), PointCloud(points), self.camera)
        u_min, _, u_max, _ = proposal.bbox
        self.assertLessEqual(abs((u_max - u_min) - 50), 2)

    def test_points_behind_camera(self):
        """Test that points behind the camera give an empty mask."""
        with self.assertRaisesMessage(DataError, 'off-screen proposal'):
            proposal_to_mask([0, 1], PointCloud([[0.0, 0.0, -1.0], [0.1, 0.0, -2.0]]), self.camera)

    def test_crop_is_z_buffered(self):
        """Test that the crop keeps the nearest point per pixel."""
        cloud = PointCloud([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], colors=[[255, 0, 0], [0, 0, 255]])
        proposal = proposal_to_mask([0, 1], cloud, self.camera)
        rgb, depth = rasterize_proposal(proposal, cloud, self.camera)
        self.assertEqual(rgb.shape, (1, 1, 3))
        self.assertEqual(tuple(rgb[0, 0]), (255, 0, 0))
        self.assertEqual(int(depth[0, 0]), 1000)


class DetectObjectsTest(SimpleTestCase):
    """Test cases for the full per-frame detector on synthetic tabletop scenes."""

    def test_recovers_every_object(self):
        """Test that 100 scenes of 2-6 objects yield one pure proposal per object."""
        rng = np.random.default_rng(2024)
        exact_counts = 0
        dominant = total = 0
        for seed in range(100):
            scene = generate_scene(seed, n_objects=int(rng.integers(2, 7)))
            proposals = detect_objects(scene.cloud, scene.camera, seed=seed)
            exact_counts += len(proposals) == len(scene.objects)
            for proposal in proposals:
                overlaps = [np.intersect1d(proposal.point_indices, item.indices).size for item in scene.objects]
                dominant += max(overlaps)
                total += len(proposal.point_indices)
        self.assertGreaterEqual(exact_counts / 100, 0.95)
        self.assertGreaterEqual(dominant / total, 0.99)

    def test_collinear_stray_points_do_not_abort_the_frame(self):
        """Test that a short collinear streak is dropped instead of failing the frame."""
        scene = generate_scene(0, n_objects=3)
        streak = np.column_stack([np.linspace(0.3, 0.31, 12), np.full(12, 0.3), np.full(12, 1.5)])
        cloud = PointCloud(
            np.vstack([scene.cloud.points, streak]),
            colors=np.vstack([scene.cloud.colors, np.full((12, 3), 90, dtype=np.uint8)]),
        )
        expected = detect_objects(scene.cloud, scene.camera, seed=0)
        proposals = detect_objects(cloud, scene.camera, seed=0)
        self.assertEqual(len(proposals), len(expected))
        streak_indices = np.arange(len(scene.cloud), len(cloud))
        for proposal in proposals:
            self.assertEqual(np.intersect1d(proposal.point_indices, streak_indices).size, 0)

    def test_unprepared_cloud(self):
        scene = generate_scene(0, n_objects=1)
        with self.assertRaisesMessage(DataError, 'unprepared cloud'):
            detect_objects(PointCloud(scene.cloud.points), scene.camera)
