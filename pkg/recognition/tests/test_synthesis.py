"""
Unit tests for surface sampling, virtual cameras and depth rendering.
"""

import numpy as np
from django.test import SimpleTestCase

from recognition.exceptions import DataError
from recognition.geometry import CameraModel, PointCloud, project_point
from recognition.scenes import box, icosphere
from recognition.synthesis import (
    DepthImage,
    RenderConfig,
    TriangleMesh,
    generate_poses,
    hidden_point_removal,
    render_depth,
    render_views,
    resize_depth,
    sample_surface,
)

UNIT_SQUARE = TriangleMesh(
    vertices=[[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
    faces=[[0, 1, 2], [0, 2, 3]],
)


def axis_camera():
    return CameraModel.from_parameters(500.0, (250.0, 250.0), 500, 500)


def ray_visibility(mesh, points, viewpoint, eps=1e-7):
    """
    Visible iff the segment from ``viewpoint`` to the point crosses no face
    before reaching it (Moller-Trumbore over every point/face pair).
    """
    viewpoint = np.asarray(viewpoint, dtype=np.float64)
    v0, v1, v2 = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
    e1, e2 = v1 - v0, v2 - v0
    direction = points - viewpoint
    pvec = np.cross(direction[:, None, :], e2[None, :, :])
    det = np.einsum('mk,nmk->nm', e1, pvec)
    usable = np.abs(det) > 1e-12
    inverse = 1.0 / np.where(usable, det, 1.0)
    tvec = viewpoint - v0
    u = np.einsum('mk,nmk->nm', tvec, pvec) * inverse
    qvec = np.cross(tvec, e1)
    v = np.einsum('nk,mk->nm', direction, qvec) * inverse
    t = np.einsum('mk,mk->m', e2, qvec)[None, :] * inverse
    hit = usable & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9) & (t < 1 - eps)
    return ~hit.any(axis=1)


class SampleSurfaceTest(SimpleTestCase):
    """Test cases for area-weighted surface sampling."""

    def test_area_proportional(self):
        """Test that samples are spread in proportion to face area."""
        cloud = sample_surface(UNIT_SQUARE, 10000, 0.0, seed=3)
        first_triangle = np.count_nonzero(cloud.points[:, 1] <= cloud.points[:, 0])
        self.assertTrue(4600 <= first_triangle <= 5400)
        self.assertTrue(np.all(cloud.points[:, 2] == 0.0))

    def test_zero_samples(self):
        self.assertEqual(len(sample_surface(UNIT_SQUARE, 0)), 0)

    def test_samples_lie_on_faces(self):
        """Test that every sample lies on a face."""
        mesh = icosphere(1.0, 2)
        cloud = sample_surface(mesh, 2000, 0.0, seed=1)
        a, b, c = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
        normals = np.cross(b - a, c - a)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        offsets = np.einsum('ij,ij->i', normals, a)
        distances = np.abs(cloud.points @ normals.T - offsets).min(axis=1)
        self.assertLess(distances.max(), 1e-6)

    def test_empty_mesh(self):
        """Test that a mesh without faces is rejected."""
        with self.assertRaisesMessage(DataError, 'empty mesh'):
            sample_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), 10)

    def test_seeded(self):
        """Test that one seed gives one sample set."""
        first = sample_surface(UNIT_SQUARE, 100, 0.01, seed=5)
        second = sample_surface(UNIT_SQUARE, 100, 0.01, seed=5)
        np.testing.assert_array_equal(first.points, second.points)


class GeneratePosesTest(SimpleTestCase):
    """Test cases for the hemisphere of virtual cameras."""

    def test_default_count(self):
        """Test that the default pose grid has thirty poses."""
        self.assertEqual(len(generate_poses(RenderConfig(), (0, 0, 0), 1.0)), 30)

    def test_single_yaw(self):
        self.assertEqual(len(generate_poses(RenderConfig(yaw_step=360.0), (0, 0, 0), 1.0)), 3)

    def test_every_pose_sees_the_center(self):
        """Test that the model center projects to the image center in every pose."""
        center = np.array([0.3, -0.2, 0.5])
        for camera in generate_poses(RenderConfig(), center, 0.4):
            u, v, d = project_point(camera, center)
            self.assertAlmostEqual(u, 250.0, places=6)
            self.assertAlmostEqual(v, 250.0, places=6)
            self.assertAlmostEqual(d, 1.0, places=9)

    def test_elevations(self):
        """Test that poses cover the three elevations."""
        center = np.zeros(3)
        heights = sorted({round(float(camera.center[2]), 6) for camera in generate_poses(RenderConfig(), center, 1.0)})
        np.testing.assert_allclose(heights, [0.0, 2.5 * np.sin(np.radians(30)), 2.5 * np.sin(np.radians(60))],
                                   atol=1e-6)


class HiddenPointRemovalTest(SimpleTestCase):
    """Test cases for spherical-flip visibility."""

    def test_single_point(self):
        visible = hidden_point_removal(PointCloud([[0.0, 0.0, 1.0]]), (0, 0, 0))
        np.testing.assert_array_equal(visible, [0])

    def test_sphere_front_and_back(self):
        """Test that the front of a sphere is visible and the back hidden."""
        rng = np.random.default_rng(0)
        points = rng.normal(size=(2000, 3))
        points /= np.linalg.norm(points, axis=1, keepdims=True)
        visible = np.zeros(2000, dtype=bool)
        visible[hidden_point_removal(PointCloud(points), (0, 0, 5))] = True

        front = points[:, 2] > 0.2
        back = points[:, 2] < -0.2
        self.assertGreaterEqual(visible[front].mean(), 0.95)
        self.assertLessEqual(visible[back].mean(), 0.05)

    def test_cube_back_face_removed(self):
        """Test that the back face of a cube is hidden."""
        cloud = sample_surface(box((1.0, 1.0, 1.0), corner=(-0.5, -0.5, -0.5)), 6000, 0.0, seed=2)
        visible = np.zeros(len(cloud), dtype=bool)
        visible[hidden_point_removal(cloud, (0, 0, 5))] = True
        p = cloud.points
        back_interior = (p[:, 2] < -0.5 + 1e-9) & (np.abs(p[:, 0]) < 0.45) & (np.abs(p[:, 1]) < 0.45)
        self.assertTrue(back_interior.any())
        self.assertFalse(visible[back_interior].any())

    def test_agrees_with_ray_casting(self):
        """Test that HPR agrees with exact ray occlusion on at least 90% of points."""
        fixtures = [
            (icosphere(1.0, 2), (0.0, 0.0, 5.0)),
            (icosphere(1.0, 2), (2.0, -3.0, 1.5)),
            (box((1.0, 1.0, 1.0), corner=(-0.5, -0.5, -0.5)), (0.0, 0.0, 5.0)),
            (box((1.0, 2.0, 0.5), corner=(-0.5, -1.0, -0.25)), (3.0, 2.0, 4.0)),
        ]
        for index, (mesh, viewpoint) in enumerate(fixtures):
            cloud = sample_surface(mesh, 2000, 0.0, seed=index)
            visible = np.zeros(len(cloud), dtype=bool)
            visible[hidden_point_removal(cloud, viewpoint)] = True
            expected = ray_visibility(mesh, cloud.points, viewpoint)
            self.assertTrue(expected.any() and not expected.all())
            self.assertGreaterEqual(np.mean(visible == expected), 0.9, f'fixture {index}')

    def test_degenerate_geometry(self):
        with self.assertRaisesMessage(DataError, 'degenerate geometry'):
            hidden_point_removal(PointCloud(np.ones((4, 3))), (1, 1, 1))


class RenderDepthTest(SimpleTestCase):
    """Test cases for z-buffered depth rendering."""

    def test_single_point(self):
        image = render_depth(PointCloud([[0.0, 0.0, 1.234]]), axis_camera())
        self.assertEqual(int(image.depth[250, 250]), 1234)
        self.assertEqual(np.count_nonzero(image.depth), 1)

    def test_nearest_point_wins(self):
        """Test that the depth image keeps the nearest point."""
        image = render_depth(PointCloud([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]]), axis_camera())
        self.assertEqual(int(image.depth[250, 250]), 1000)

    def test_sphere_center_depth(self):
        """Test that the sphere center pixel has the expected depth."""
        grid = np.arange(-0.02, 0.0201, 0.001)
        xs, ys = np.meshgrid(grid, grid)
        xs, ys = xs.ravel(), ys.ravel()
        front = np.column_stack([xs, ys, 2.0 - np.sqrt(0.25 - xs ** 2 - ys ** 2)])
        back = np.column_stack([xs, ys, 2.0 + np.sqrt(0.25 - xs ** 2 - ys ** 2)])
        image = render_depth(PointCloud(np.vstack([back, front])), axis_camera())
        self.assertEqual(int(image.depth[250, 250]), 1500)

    def test_resize_ignores_missing(self):
        """Test that resizing ignores missing depth."""
        depth = np.zeros((2, 2), dtype=np.uint16)
        depth[0, 0] = 1000
        resized = resize_depth(DepthImage(depth, CameraModel.from_parameters(1.0, (0.5, 0.5), 2, 2)), 1)
        self.assertEqual(int(resized.depth[0, 0]), 1000)
        self.assertEqual((resized.camera.width, resized.camera.height), (1, 1))

    def test_resize_all_missing(self):
        """Test that an all-missing image stays missing."""
        depth = np.zeros((4, 4), dtype=np.uint16)
        resized = resize_depth(DepthImage(depth, CameraModel.from_parameters(4.0, (2, 2), 4, 4)), 2)
        self.assertFalse(resized.depth.any())

    def test_depth_must_be_millimetres(self):
        """Test that depth images must be 16-bit."""
        with self.assertRaises(DataError):
            DepthImage(np.zeros((2, 2), dtype=np.float32), axis_camera())


class RenderViewsTest(SimpleTestCase):
    """Test cases for the multi-view renderer."""

    def test_default_config_on_sphere(self):
        """Test that the default config renders thirty square views."""
        views = render_views(icosphere(0.1, 3), RenderConfig(), seed=0)
        self.assertEqual(len(views), 30)
        for view in views:
            self.assertEqual(view.depth.shape, (224, 224))
            self.assertTrue(view.depth[100:124, 100:124].any())
        self.assertEqual(views[0].pose, (270.0, 0.0, 0.0))

    def test_deterministic_across_workers(self):
        """Test that the worker count does not change the views."""
        config = RenderConfig(sample_count=3000, image_size=200, focal=200.0, principal=(100.0, 100.0),
                              output_size=64)
        mesh = box((0.1, 0.06, 0.04))
        first = render_views(mesh, config, seed=4)
        second = render_views(mesh, config, seed=4, jobs=3)
        self.assertEqual(len(first), len(second))
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.depth, b.depth)
