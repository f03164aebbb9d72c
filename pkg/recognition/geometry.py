"""
Point-cloud geometry for the recognition app.

This module contains:
- PointCloud: immutable point storage with optional colors, intensities, normals
- CameraModel: pinhole intrinsics plus world-to-camera extrinsics
- Normal estimation, rigid transforms and the pinhole projection

Clouds are stored in the world frame; a CameraModel carries the extrinsics
that map world points into its own frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DataError

logger = logging.getLogger(__name__)

NORMAL_TOLERANCE = 1e-6
ROTATION_TOLERANCE = 1e-9
MIN_DEPTH = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def as_point(p) -> np.ndarray:
    """Return ``p`` as a finite float64 3-vector."""
    point = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(point)):
        raise DataError('non-finite coordinates')
    return point


def intensity_from_colors(colors: np.ndarray) -> np.ndarray:
    """Scalar intensity I_p = round((R+G+B)/3) on 0-255."""
    colors = np.asarray(colors, dtype=np.float64)
    return np.floor(colors.sum(axis=1) / 3.0 + 0.5)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    An immutable point cloud.

    Parallel arrays share the point count. Normals, when present, are unit
    vectors; intensities are derived from colors when not given explicitly.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    intensities: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise DataError('non-finite coordinates')
        n = len(points)
        object.__setattr__(self, 'points', _frozen(points))

        colors = self.colors
        if colors is not None:
            colors = np.asarray(colors).reshape(-1, 3)
            if len(colors) != n:
                raise DataError('colors length does not match points')
            colors = np.clip(colors, 0, 255).astype(np.uint8)
            object.__setattr__(self, 'colors', _frozen(colors))

        intensities = self.intensities
        if intensities is None and colors is not None:
            intensities = intensity_from_colors(colors)
        if intensities is not None:
            intensities = np.asarray(intensities, dtype=np.float64).reshape(-1)
            if len(intensities) != n:
                raise DataError('intensities length does not match points')
            object.__setattr__(self, 'intensities', _frozen(intensities))

        if self.normals is not None:
            normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != n:
                raise DataError('normals length does not match points')
            norms = np.linalg.norm(normals, axis=1)
            if n and np.max(np.abs(norms - 1.0)) > NORMAL_TOLERANCE:
                raise DataError('normals must have unit length')
            object.__setattr__(self, 'normals', _frozen(normals))

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, indices) -> PointCloud:
        """Return the cloud restricted to ``indices`` (order preserved)."""
        indices = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            points=self.points[indices],
            colors=None if self.colors is None else self.colors[indices],
            intensities=None if self.intensities is None else self.intensities[indices],
            normals=None if self.normals is None else self.normals[indices],
        )

    def with_normals(self, normals: np.ndarray) -> PointCloud:
        return PointCloud(self.points, self.colors, self.intensities, normals)

    @property
    def is_prepared(self) -> bool:
        """True when the cloud carries the normals and intensities clustering needs."""
        return self.normals is not None and self.intensities is not None


class PixelProjection(NamedTuple):
    """Continuous pixel coordinates plus depth (meters) of a projected point."""

    u: float
    v: float
    d: float


@dataclass(frozen=True, eq=False)
class CameraModel:
    """
    Pinhole camera: intrinsics C (3x3) and world-to-camera pose [R|t].

    A world point p maps to camera coordinates R·p + t; the camera looks
    along its +z axis with +x right and +y down.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 500
    height: int = 500

    def __post_init__(self):
        intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        if intrinsics[0, 0] <= 0 or intrinsics[1, 1] <= 0:
            raise DataError('focal lengths must be positive')
        if not np.allclose(intrinsics[2], [0.0, 0.0, 1.0], atol=1e-12):
            raise DataError('intrinsics last row must be [0, 0, 1]')
        rotation = validate_rotation(self.rotation)
        translation = as_point(self.translation)
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise DataError('image size must be positive')
        object.__setattr__(self, 'intrinsics', _frozen(intrinsics))
        object.__setattr__(self, 'rotation', _frozen(rotation))
        object.__setattr__(self, 'translation', _frozen(translation))
        object.__setattr__(self, 'width', int(self.width))
        object.__setattr__(self, 'height', int(self.height))

    @classmethod
    def from_parameters(
        cls,
        focal: float,
        principal: tuple[float, float],
        width: int,
        height: int,
        rotation=None,
        translation=None,
    ) -> CameraModel:
        intrinsics = np.array([
            [focal, 0.0, principal[0]],
            [0.0, focal, principal[1]],
            [0.0, 0.0, 1.0],
        ])
        return cls(
            intrinsics=intrinsics,
            rotation=np.eye(3) if rotation is None else rotation,
            translation=np.zeros(3) if translation is None else translation,
            width=width,
            height=height,
        )

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def center(self) -> np.ndarray:
        """Camera optical centre in world coordinates, -Rᵀt."""
        return -self.rotation.T @ self.translation

    def in_camera_frame(self) -> CameraModel:
        """Same intrinsics with identity pose, for clouds already in this camera's frame."""
        return CameraModel(self.intrinsics, np.eye(3), np.zeros(3), self.width, self.height)

    def scaled(self, width: int, height: int) -> CameraModel:
        """Camera of a resized image (pixel-centre aligned)."""
        sx = width / self.width
        sy = height / self.height
        intrinsics = self.intrinsics.copy()
        intrinsics[0, 0] *= sx
        intrinsics[0, 1] *= sx
        intrinsics[1, 1] *= sy
        intrinsics[0, 2] = (self.cx + 0.5) * sx - 0.5
        intrinsics[1, 2] = (self.cy + 0.5) * sy - 0.5
        return CameraModel(intrinsics, self.rotation, self.translation, width, height)


def validate_rotation(rotation) -> np.ndarray:
    """Return ``rotation`` as a 3x3 array, raising unless it is a proper rotation."""
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise DataError('invalid rotation')
    if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > ROTATION_TOLERANCE:
        raise DataError('invalid rotation')
    if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOLERANCE:
        raise DataError('invalid rotation')
    return rotation


def estimate_normals_masked(
    cloud: PointCloud,
    k: int = 10,
    viewpoint=(0.0, 0.0, 0.0),
) -> tuple[PointCloud, np.ndarray]:
    """
    Estimate unit normals by PCA over each point's k nearest neighbours.

    The neighbourhood is the point itself plus its k nearest other points, so
    the cloud needs at least k+1 points. The normal is the eigenvector of the
    smallest covariance eigenvalue, flipped to face ``viewpoint``.

    Returns the cloud with normals and a boolean mask that is False where the
    neighbourhood is (numerically) collinear. Normals of those rows are unit
    vectors but carry no surface information.

    Raises:
        DataError: "insufficient points".
    """
    if k < 3:
        raise DataError('k must be at least 3')
    n = len(cloud)
    if n < k + 1:
        raise DataError('insufficient points')
    viewpoint = as_point(viewpoint)
    points = cloud.points

    _, neighbours = cKDTree(points).query(points, k=k + 1)
    local = points[neighbours]
    centered = local - local.mean(axis=1, keepdims=True)
    covariances = np.einsum('nki,nkj->nij', centered, centered) / k
    eigenvalues, eigenvectors = np.linalg.eigh(covariances)

    scale = np.maximum(eigenvalues[:, 2], np.finfo(float).tiny)
    valid = eigenvalues[:, 1] > 1e-12 * scale

    normals = eigenvectors[:, :, 0]
    flip = np.einsum('ij,ij->i', normals, viewpoint - points) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals), valid


def estimate_normals(cloud: PointCloud, k: int = 10, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """
    Like :func:`estimate_normals_masked`, but every neighbourhood must be
    well defined.

    Raises:
        DataError: "insufficient points" or "degenerate neighborhood".
    """
    estimated, valid = estimate_normals_masked(cloud, k, viewpoint)
    if not valid.all():
        raise DataError('degenerate neighborhood')
    return estimated


def camera_coordinates(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    """World points (n, 3) expressed in the camera frame."""
    return np.asarray(points, dtype=np.float64) @ camera.rotation.T + camera.translation


def project_point(camera: CameraModel, p) -> PixelProjection:
    """
    Project a world point: d·[u, v, 1]ᵀ = C·[R|t]·[x, y, z, 1]ᵀ.

    Raises:
        DataError: "behind camera" when the camera-frame depth is <= 1e-9.
    """
    p = as_point(p)
    camera_point = camera.rotation @ p + camera.translation
    if camera_point[2] <= MIN_DEPTH:
        raise DataError('behind camera')
    homogeneous = camera.intrinsics @ camera_point
    d = homogeneous[2]
    return PixelProjection(float(homogeneous[0] / d), float(homogeneous[1] / d), float(d))


def project_points(camera: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized projection of world points.

    Returns (uv, depth, valid): continuous (n, 2) pixel coordinates, camera-frame
    depths and a mask of points in front of the camera. uv of invalid points
    is NaN.
    """
    camera_points = camera_coordinates(camera, points)
    depth = camera_points[:, 2]
    valid = depth > MIN_DEPTH
    homogeneous = camera_points @ camera.intrinsics.T
    uv = np.full((len(depth), 2), np.nan)
    uv[valid] = homogeneous[valid, :2] / homogeneous[valid, 2:3]
    return uv, depth, valid


def back_project(camera: CameraModel, u: float, v: float, d: float) -> np.ndarray:
    """World point whose projection is (u, v) at depth d."""
    if d <= MIN_DEPTH:
        raise DataError('behind camera')
    camera_point = d * np.linalg.solve(camera.intrinsics, np.array([u, v, 1.0]))
    return camera.rotation.T @ (camera_point - camera.translation)


def rasterize(uv: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Round continuous pixel coordinates to the nearest pixel.

    Returns integer columns, rows and a mask of pixels inside the image.
    """
    columns = np.floor(uv[:, 0] + 0.5)
    rows = np.floor(uv[:, 1] + 0.5)
    inside = (
        np.isfinite(columns) & np.isfinite(rows)
        & (columns >= 0) & (columns < width)
        & (rows >= 0) & (rows < height)
    )
    columns = np.where(inside, columns, 0).astype(np.int64)
    rows = np.where(inside, rows, 0).astype(np.int64)
    return columns, rows, inside


def nearest_per_pixel(pixel_ids: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """
    Z-buffer selection: for each distinct pixel id, the index of the point with
    the smallest depth (lowest index on ties).
    """
    if len(pixel_ids) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(depth)), depth, pixel_ids))
    _, first = np.unique(pixel_ids[order], return_index=True)
    return order[first]


def transform_cloud(rotation, translation, cloud: PointCloud) -> PointCloud:
    """
    Apply p → R·p + t to every point; normals are rotated only.

    Raises:
        DataError: "invalid rotation" for a non-orthonormal R.
    """
    rotation = validate_rotation(rotation)
    translation = as_point(translation)
    points = cloud.points @ rotation.T + translation
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ rotation.T
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(points, cloud.colors, cloud.intensities, normals)


def rotation_about(axis: str, degrees: float) -> np.ndarray:
    """Rotation matrix about a principal axis ('x', 'y' or 'z')."""
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    if axis == 'x':
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == 'y':
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == 'z':
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f'unknown axis {axis!r}')


def euler_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Extrinsic X(roll), then Y(pitch), then Z(yaw) rotation: Rz·Ry·Rx."""
    return rotation_about('z', yaw) @ rotation_about('y', pitch) @ rotation_about('x', roll)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """
    World-to-camera (R, t) for a camera at ``eye`` looking at ``target``.

    Falls back to the world y axis as "up" when the view direction is parallel
    to ``up``.
    """
    eye = as_point(eye)
    forward = as_point(target) - eye
    distance = np.linalg.norm(forward)
    if distance <= MIN_DEPTH:
        raise DataError('degenerate geometry')
    forward /= distance
    up = as_point(up)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.vstack([right, down, forward])
    return rotation, -rotation @ eye
