"""
Unit tests for point clouds, cameras and projection.
"""

import numpy as np
from django.test import SimpleTestCase

from recognition.exceptions import DataError
from recognition.geometry import (
    CameraModel,
    PointCloud,
    back_project,
    estimate_normals,
    estimate_normals_masked,
    euler_zyx,
    intensity_from_colors,
    look_at,
    nearest_per_pixel,
    project_point,
    project_points,
    rotation_about,
    transform_cloud,
)


def default_camera(**kwargs):
    return CameraModel.from_parameters(500.0, (250.0, 250.0), 500, 500, **kwargs)


class PointCloudTest(SimpleTestCase):
    """Test cases for PointCloud construction."""

    def test_intensity_is_rounded_channel_mean(self):
        """Test that intensity is the rounded mean of the color channels."""
        colors = np.array([[0, 0, 1], [255, 255, 255], [10, 20, 31]])
        np.testing.assert_array_equal(intensity_from_colors(colors), [0.0, 255.0, 20.0])

    def test_colors_imply_intensities(self):
        """Test that colors alone produce intensities."""
        cloud = PointCloud(np.zeros((2, 3)), colors=[[30, 60, 90], [0, 0, 0]])
        np.testing.assert_array_equal(cloud.intensities, [60.0, 0.0])
        self.assertFalse(cloud.is_prepared)

    def test_non_unit_normals_rejected(self):
        """Test that normals must have unit length."""
        with self.assertRaises(DataError):
            PointCloud(np.zeros((1, 3)), normals=[[0.0, 0.0, 2.0]])

    def test_mismatched_lengths_rejected(self):
        """Test that attribute lengths must match the points."""
        with self.assertRaises(DataError):
            PointCloud(np.zeros((3, 3)), colors=np.zeros((2, 3)))

    def test_arrays_are_read_only(self):
        """Test that cloud arrays cannot be modified in place."""
        cloud = PointCloud(np.zeros((2, 3)))
        with self.assertRaises(ValueError):
            cloud.points[0, 0] = 1.0

    def test_subset_keeps_order(self):
        cloud = PointCloud(np.arange(12, dtype=float).reshape(4, 3), colors=np.full((4, 3), 9))
        part = cloud.subset([3, 1])
        np.testing.assert_array_equal(part.points[:, 0], [9.0, 3.0])
        self.assertEqual(len(part.colors), 2)


class EstimateNormalsTest(SimpleTestCase):
    """Test cases for PCA normal estimation."""

    def test_plane_normals_face_viewpoint(self):
        """Test that plane normals are oriented towards the viewpoint."""
        rng = np.random.default_rng(0)
        points = np.column_stack([rng.uniform(-1, 1, (100, 2)), np.zeros(100)])
        cloud = estimate_normals(PointCloud(points), k=10, viewpoint=(0, 0, 1))
        np.testing.assert_allclose(cloud.normals, np.tile([0.0, 0.0, 1.0], (100, 1)), atol=1e-6)

    def test_sphere_normals_are_radial(self):
        """Test that sphere normals are radial within five degrees."""
        rng = np.random.default_rng(1)
        points = rng.normal(size=(2000, 3))
        points /= np.linalg.norm(points, axis=1, keepdims=True)
        cloud = estimate_normals(PointCloud(points), k=10, viewpoint=(0, 0, 10))
        cosines = np.abs(np.einsum('ij,ij->i', cloud.normals, points))
        self.assertTrue(np.all(cosines >= np.cos(np.radians(5.0))))

    def test_too_few_points(self):
        """Test that fewer than k + 1 points are rejected."""
        points = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
        with self.assertRaisesMessage(DataError, 'insufficient points'):
            estimate_normals(PointCloud(points), k=3)

    def test_masked_estimation_flags_only_collinear_points(self):
        """Test that only points with collinear neighbourhoods are marked invalid."""
        rng = np.random.default_rng(2)
        plane = np.column_stack([rng.uniform(-1, 1, (100, 2)), np.zeros(100)])
        line = np.column_stack([np.linspace(0.0, 0.11, 12), np.full(12, 5.0), np.full(12, 5.0)])
        cloud, valid = estimate_normals_masked(PointCloud(np.vstack([plane, line])), k=10, viewpoint=(0, 0, 1))
        np.testing.assert_array_equal(valid, np.r_[np.ones(100, dtype=bool), np.zeros(12, dtype=bool)])
        np.testing.assert_allclose(cloud.normals[:100], np.tile([0.0, 0.0, 1.0], (100, 1)), atol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0)

    def test_collinear_points_are_degenerate(self):
        """Test that collinear neighborhoods are reported as degenerate."""
        points = np.column_stack([np.arange(6.0), np.zeros(6), np.zeros(6)])
        with self.assertRaisesMessage(DataError, 'degenerate neighborhood'):
            estimate_normals(PointCloud(points), k=3)


class ProjectionTest(SimpleTestCase):
    """Test cases for the pinhole projection and its inverse."""

    def setUp(self):
        """Set up test fixtures."""
        self.camera = default_camera()

    def test_optical_axis_maps_to_principal_point(self):
        """Test that a point on the optical axis projects to the principal point."""
        self.assertEqual(tuple(project_point(self.camera, (0, 0, 1))), (250.0, 250.0, 1.0))

    def test_offset_point(self):
        u, v, d = project_point(self.camera, (0.1, 0, 1))
        self.assertAlmostEqual(u, 300.0, places=12)
        self.assertEqual((v, d), (250.0, 1.0))

    def test_behind_camera(self):
        """Test that points behind the camera are flagged invalid."""
        with self.assertRaisesMessage(DataError, 'behind camera'):
            project_point(self.camera, (0, 0, -1))

    def test_matrix_identity_and_round_trip(self):
        """Test that projecting and back-projecting returns the original points."""
        rng = np.random.default_rng(2)
        rotation = euler_zyx(*rng.uniform(0, 360, size=3))
        camera = default_camera(rotation=rotation, translation=(0.1, -0.2, 3.0))
        points = rng.uniform(-1, 1, size=(100000, 3))
        uv, depth, valid = project_points(camera, points)
        self.assertTrue(valid.all())

        extrinsics = np.hstack([camera.rotation, camera.translation[:, None]])
        homogeneous = np.hstack([points, np.ones((len(points), 1))])
        expected = homogeneous @ (camera.intrinsics @ extrinsics).T
        lhs = np.column_stack([uv, np.ones(len(uv))]) * depth[:, None]
        np.testing.assert_allclose(lhs, expected, atol=1e-9, rtol=0)

        for i in range(0, len(points), 997):
            restored = back_project(camera, uv[i, 0], uv[i, 1], depth[i])
            self.assertLess(np.linalg.norm(restored - points[i]), 1e-9)

    def test_vectorized_matches_scalar(self):
        """Test that the vectorized projection matches the scalar one."""
        points = np.array([[0.1, 0.2, 2.0], [0.0, 0.0, -1.0]])
        uv, depth, valid = project_points(self.camera, points)
        np.testing.assert_array_equal(valid, [True, False])
        self.assertTrue(np.all(np.isnan(uv[1])))
        single = project_point(self.camera, points[0])
        np.testing.assert_allclose(uv[0], [single.u, single.v], atol=1e-12)
        self.assertEqual(depth[0], single.d)

    def test_camera_center(self):
        """Test that the camera center maps to the camera origin."""
        rotation, translation = look_at((1.0, 2.0, 3.0), (0.0, 0.0, 0.0))
        camera = default_camera(rotation=rotation, translation=translation)
        np.testing.assert_allclose(camera.center, [1.0, 2.0, 3.0], atol=1e-12)
        self.assertAlmostEqual(project_point(camera, (0, 0, 0)).u, 250.0, places=9)

    def test_invalid_intrinsics(self):
        """Test that non-positive focal lengths are rejected."""
        with self.assertRaises(DataError):
            CameraModel(np.array([[500, 0, 250], [0, 500, 250], [0, 1, 1]]))


class TransformTest(SimpleTestCase):
    """Test cases for rigid transforms."""

    def setUp(self):
        """Set up test fixtures."""
        self.cloud = PointCloud(np.random.default_rng(3).normal(size=(50, 3)))

    def test_identity(self):
        """Test that the identity transform keeps every point."""
        moved = transform_cloud(np.eye(3), np.zeros(3), self.cloud)
        np.testing.assert_array_equal(moved.points, self.cloud.points)

    def test_inverse_translation(self):
        moved = transform_cloud(np.eye(3), (1, 0, 0), self.cloud)
        back = transform_cloud(np.eye(3), (-1, 0, 0), moved)
        np.testing.assert_allclose(back.points, self.cloud.points, atol=1e-12)

    def test_quarter_turn(self):
        """Test that a quarter turn about z maps x onto y."""
        moved = transform_cloud(rotation_about('z', 90.0), np.zeros(3), PointCloud([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(moved.points[0], [0.0, 1.0, 0.0], atol=1e-12)

    def test_invalid_rotation(self):
        """Test that a non-orthonormal rotation is rejected."""
        with self.assertRaisesMessage(DataError, 'invalid rotation'):
            transform_cloud(np.diag([1.0, 1.0, 2.0]), np.zeros(3), self.cloud)
        with self.assertRaisesMessage(DataError, 'invalid rotation'):
            transform_cloud(np.diag([1.0, 1.0, -1.0]), np.zeros(3), self.cloud)

    def test_normals_rotate_with_points(self):
        """Test that normals rotate but do not translate."""
        cloud = PointCloud([[0.0, 0.0, 0.0]], normals=[[1.0, 0.0, 0.0]])
        moved = transform_cloud(rotation_about('z', 90.0), (5, 5, 5), cloud)
        np.testing.assert_allclose(moved.normals[0], [0.0, 1.0, 0.0], atol=1e-12)


class ZBufferTest(SimpleTestCase):
    """Test cases for nearest-point selection per pixel."""

    def test_nearest_wins_and_ties_go_to_lowest_index(self):
        """Test that the nearest point wins and ties go to the lowest index."""
        pixels = np.array([5, 5, 7, 5, 7])
        depth = np.array([2.0, 1.0, 3.0, 1.0, 3.0])
        np.testing.assert_array_equal(nearest_per_pixel(pixels, depth), [1, 2])

    def test_empty(self):
        self.assertEqual(len(nearest_per_pixel(np.zeros(0, dtype=int), np.zeros(0))), 0)
