"""
Unit tests for the on-disk formats.
"""

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from recognition.exceptions import DataError
from recognition.formats import (
    read_camera,
    read_depth_png,
    read_json,
    read_jsonl,
    read_mask_png,
    read_off,
    read_ply,
    write_camera,
    write_depth_png,
    write_json,
    write_jsonl,
    write_mask_png,
    write_ply,
)
from recognition.geometry import CameraModel, PointCloud, look_at


class FormatTestCase(SimpleTestCase):
    def setUp(self):
        """Set up test fixtures."""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()


class PlyTest(FormatTestCase):
    """Test cases for PLY point clouds."""

    def setUp(self):
        """Set up test fixtures."""
        super().setUp()
        rng = np.random.default_rng(0)
        normals = rng.normal(size=(20, 3))
        self.cloud = PointCloud(
            rng.uniform(-1, 1, (20, 3)),
            colors=rng.integers(0, 256, (20, 3)),
            normals=normals / np.linalg.norm(normals, axis=1, keepdims=True),
        )

    def test_binary_cloud_is_exact(self):
        """Test that a binary cloud is read back bit for bit."""
        path = self.root / 'cloud.ply'
        write_ply(path, self.cloud)
        loaded = read_ply(path)
        np.testing.assert_array_equal(loaded.points, self.cloud.points)
        np.testing.assert_array_equal(loaded.colors, self.cloud.colors)
        np.testing.assert_allclose(loaded.normals, self.cloud.normals, atol=1e-12)
        np.testing.assert_array_equal(loaded.intensities, self.cloud.intensities)

    def test_ascii_with_labels(self):
        """Test that ascii clouds keep a per-point label column."""
        path = self.root / 'labelled.ply'
        write_ply(path, self.cloud, labels=np.arange(20), binary=False)
        self.assertIn(b'property int label', path.read_bytes())
        loaded = read_ply(path)
        np.testing.assert_array_equal(loaded.points, self.cloud.points)

    def test_points_only(self):
        """Test that a cloud without colors is read without attributes."""
        path = self.root / 'bare.ply'
        path.write_text('ply\nformat ascii 1.0\ncomment hand written\nelement vertex 2\n'
                        'property float x\nproperty float y\nproperty float z\nend_header\n'
                        '0 0 1\n1 2 3\n')
        loaded = read_ply(path)
        self.assertEqual(len(loaded), 2)
        self.assertIsNone(loaded.colors)
        self.assertIsNone(loaded.normals)

    def test_zero_normal_only_affects_its_row(self):
        """Test that one zero-length normal is re-estimated and the rest are kept."""
        grid = np.stack(np.meshgrid(np.arange(5.0), np.arange(5.0)), axis=-1).reshape(-1, 2) * 0.1
        rows = [f'{x:.1f} {y:.1f} 0 0 0 1' for x, y in grid]
        rows[12] = '{:.1f} {:.1f} 0 0 0 0'.format(*grid[12])
        rows[3] = '{:.1f} {:.1f} 0 0 0 -2'.format(*grid[3])
        path = self.root / 'plane.ply'
        path.write_text(
            'ply\nformat ascii 1.0\nelement vertex 25\n'
            'property float x\nproperty float y\nproperty float z\n'
            'property float nx\nproperty float ny\nproperty float nz\nend_header\n'
            + '\n'.join(rows) + '\n')
        with self.assertLogs('recognition.formats', level='WARNING'):
            loaded = read_ply(path)
        self.assertIsNotNone(loaded.normals)
        expected = np.tile([0.0, 0.0, 1.0], (25, 1))
        expected[3] = [0.0, 0.0, -1.0]
        np.testing.assert_allclose(np.delete(loaded.normals, 12, axis=0),
                                   np.delete(expected, 12, axis=0))
        np.testing.assert_allclose(np.abs(loaded.normals[12]), [0.0, 0.0, 1.0], atol=1e-9)
        self.assertAlmostEqual(float(np.linalg.norm(loaded.normals[12])), 1.0)

    def test_corrupt_files(self):
        """Test that truncated and malformed clouds raise data errors."""
        truncated = self.root / 'truncated.ply'
        write_ply(truncated, self.cloud)
        truncated.write_bytes(truncated.read_bytes()[:-10])
        garbage = self.root / 'garbage.ply'
        garbage.write_bytes(b'not a ply file\n')
        for path in (truncated, garbage, self.root / 'missing.ply'):
            with self.assertRaises(DataError):
                read_ply(path)


class CameraFileTest(FormatTestCase):
    """Test cases for camera files."""

    def test_camera_file(self):
        """Test that a camera file restores intrinsics and pose."""
        rotation, translation = look_at((0.0, -1.0, 1.0), (0.0, 0.0, 0.0))
        camera = CameraModel.from_parameters(525.0, (319.5, 239.5), 640, 480, rotation, translation)
        path = self.root / 'camera.txt'
        write_camera(path, camera)
        loaded = read_camera(path)
        np.testing.assert_array_equal(loaded.intrinsics, camera.intrinsics)
        np.testing.assert_array_equal(loaded.rotation, camera.rotation)
        np.testing.assert_array_equal(loaded.translation, camera.translation)
        self.assertEqual((loaded.width, loaded.height), (640, 480))

    def test_wrong_value_count(self):
        """Test that a camera file with missing values is rejected."""
        path = self.root / 'camera.txt'
        path.write_text('500 0 250\n0 500 250\n0 0 1\n')
        with self.assertRaisesMessage(DataError, 'must hold 23 values'):
            read_camera(path)


class OffTest(FormatTestCase):
    """Test cases for OFF meshes."""

    def test_quads_are_fan_triangulated(self):
        path = self.root / 'square.off'
        path.write_text('OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n')
        mesh = read_off(path)
        self.assertEqual(mesh.faces.tolist(), [[0, 1, 2], [0, 2, 3]])
        self.assertAlmostEqual(mesh.face_areas().sum(), 1.0)

    def test_counts_glued_to_header(self):
        """Test that counts on the header line are accepted."""
        path = self.root / 'glued.off'
        path.write_text('OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n')
        self.assertEqual(len(read_off(path).faces), 1)

    def test_zero_area_faces_dropped(self):
        """Test that zero-area faces are dropped on read."""
        path = self.root / 'degenerate.off'
        path.write_text('OFF\n3 2 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n3 0 0 1\n')
        self.assertEqual(len(read_off(path).faces), 0)

    def test_missing_header(self):
        """Test that a mesh without a header is rejected."""
        path = self.root / 'bad.off'
        path.write_text('3 1 0\n')
        with self.assertRaisesMessage(DataError, 'corrupt OFF'):
            read_off(path)


class ImageAndJsonTest(FormatTestCase):
    """Test cases for PNG rasters and JSON documents."""

    def test_mask_png(self):
        """Test that masks are stored as binary PNGs."""
        mask = np.zeros((4, 6), dtype=bool)
        mask[1:3, 2:5] = True
        path = self.root / 'mask.png'
        write_mask_png(path, mask)
        np.testing.assert_array_equal(read_mask_png(path), mask)

    def test_depth_png_keeps_sixteen_bits(self):
        """Test that depth PNGs keep the full 16-bit range."""
        depth = np.array([[0, 1234], [65535, 1]], dtype=np.uint16)
        path = self.root / 'depth.png'
        write_depth_png(path, depth)
        np.testing.assert_array_equal(read_depth_png(path), depth)

    def test_json_is_canonical(self):
        """Test that JSON documents are written with sorted keys."""
        path = self.root / 'doc.json'
        write_json(path, {'b': 1, 'a': [1, 2]})
        self.assertEqual(path.read_text(), '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n')
        self.assertEqual(read_json(path), {'a': [1, 2], 'b': 1})

    def test_jsonl(self):
        """Test that JSON lines keep one record per line."""
        path = self.root / 'nested' / 'records.jsonl'
        write_jsonl(path, [{'id': 'a'}, {'id': 'b'}])
        self.assertEqual([r['id'] for r in read_jsonl(path)], ['a', 'b'])

    def test_failed_write_leaves_no_file(self):
        """Test that a failed write leaves no partial file."""
        path = self.root / 'broken.json'
        with self.assertRaises(TypeError):
            write_json(path, {'value': object()})
        self.assertEqual(list(self.root.iterdir()), [])

    def test_unreadable_json(self):
        """Test that invalid JSON is a data error."""
        path = self.root / 'bad.json'
        path.write_text('{')
        with self.assertRaises(DataError):
            read_json(path)
