"""
Synthetic depth rendering from CAD meshes.

The renderer samples points uniformly on the mesh surface, places virtual
cameras on a hemisphere around the model, removes hidden points with the
spherical-flip operator and z-buffers the visible points into a depth map,
which is finally resized to the network input size.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .exceptions import DataError
from .geometry import (
    CameraModel,
    PointCloud,
    as_point,
    euler_zyx,
    look_at,
    nearest_per_pixel,
    project_points,
    rasterize,
    transform_cloud,
)

logger = logging.getLogger(__name__)

DEPTH_SCALE = 1000.0
MAX_DEPTH_MM = 65535


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertices (m, 3) and triangular faces (f, 3) of vertex indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise DataError('face index out of range')
        if not np.all(np.isfinite(vertices)):
            raise DataError('non-finite vertex')
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'faces', faces)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def cleaned(self) -> TriangleMesh:
        """Copy without zero-area faces."""
        if len(self.faces) == 0:
            return self
        return TriangleMesh(self.vertices, self.faces[self.face_areas() > 0])

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Centre of the vertex bounding box and the radius enclosing every vertex."""
        if len(self.vertices) == 0:
            raise DataError('empty mesh')
        center = 0.5 * (self.vertices.min(axis=0) + self.vertices.max(axis=0))
        return center, float(np.linalg.norm(self.vertices - center, axis=1).max())


@dataclass(frozen=True)
class RenderConfig:
    """
    Virtual-camera settings.

    ``noise_sigma`` of None means 0.5% of the model's bounding-sphere radius.
    Angles are in degrees; sizes and focal length in pixels.
    """

    sample_count: int = 40000
    noise_sigma: float | None = None
    rolls: tuple[float, ...] = (270.0, 240.0, 210.0)
    pitch: float = 0.0
    yaw_start: float = 0.0
    yaw_end: float = 360.0
    yaw_step: float = 36.0
    camera_distance_factor: float = 2.5
    hpr_gamma: float = 3.0
    image_size: int = 500
    focal: float = 500.0
    principal: tuple[float, float] = (250.0, 250.0)
    output_size: int = 224

    def __post_init__(self):
        if self.sample_count <= 0:
            raise DataError('sample_count must be positive')
        if self.yaw_step <= 0:
            raise DataError('yaw_step must be positive')
        if self.image_size <= 0 or self.output_size <= 0:
            raise DataError('image sizes must be positive')
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise DataError('noise_sigma must be non-negative')
        if self.camera_distance_factor <= 1:
            raise DataError('camera_distance_factor must exceed 1')
        object.__setattr__(self, 'rolls', tuple(float(r) for r in self.rolls))
        object.__setattr__(self, 'principal', tuple(float(p) for p in self.principal))

    def yaws(self) -> np.ndarray:
        return np.arange(self.yaw_start, self.yaw_end - 1e-9, self.yaw_step)

    def pose_angles(self) -> list[tuple[float, float, float]]:
        """(roll, pitch, yaw) per view, in the order views are generated."""
        return [(roll, self.pitch, float(yaw)) for roll in self.rolls for yaw in self.yaws()]


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Millimetre depth raster (uint16, 0 = no return) with its camera."""

    depth: np.ndarray
    camera: CameraModel
    pose: tuple[float, float, float] | None = field(default=None)

    def __post_init__(self):
        depth = np.asarray(self.depth)
        if depth.dtype != np.uint16:
            raise DataError('depth must be uint16 millimetres')
        object.__setattr__(self, 'depth', depth)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


def sample_surface(mesh: TriangleMesh, n: int, noise_sigma: float = 0.0, seed: int = 0) -> PointCloud:
    """
    Draw ``n`` points uniformly over the mesh surface.

    Faces are picked with probability proportional to area and points placed
    uniformly in barycentric coordinates; isotropic Gaussian noise of standard
    deviation ``noise_sigma`` is added per coordinate.

    Raises:
        DataError: "empty mesh" when the mesh has no face of positive area.
    """
    areas = mesh.face_areas() if len(mesh.faces) else np.zeros(0)
    if len(areas) == 0 or areas.sum() <= 0:
        raise DataError('empty mesh')
    if n <= 0:
        return PointCloud(np.zeros((0, 3)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (mesh.vertices[mesh.faces[chosen, i]] for i in range(3))
    points = (1.0 - r1)[:, None] * a + (r1 * (1.0 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    if noise_sigma > 0:
        points = points + rng.normal(0.0, noise_sigma, size=points.shape)
    return PointCloud(points)


def generate_poses(config: RenderConfig, center, radius: float) -> list[CameraModel]:
    """
    One camera per (roll, yaw) on a hemisphere around the bounding sphere.

    The viewing direction is Rz(yaw)·Ry(pitch)·Rx(roll) applied to (0, 0, -1),
    so rolls 270/240/210 put the camera at 0/30/60 degrees of elevation; the
    camera sits at ``camera_distance_factor * radius`` from the centre and
    looks at it with world +z as up.
    """
    if radius <= 0:
        raise DataError('bounding sphere radius must be positive')
    center = as_point(center)
    distance = config.camera_distance_factor * radius
    cameras = []
    for roll, pitch, yaw in config.pose_angles():
        direction = euler_zyx(roll, pitch, yaw) @ np.array([0.0, 0.0, -1.0])
        rotation, translation = look_at(center + distance * direction, center)
        cameras.append(CameraModel.from_parameters(
            config.focal, config.principal, config.image_size, config.image_size,
            rotation=rotation, translation=translation,
        ))
    return cameras


def hidden_point_removal(cloud: PointCloud, viewpoint, gamma: float = 3.0) -> np.ndarray:
    """
    Indices of the points visible from ``viewpoint`` (spherical flip + hull).

    Points are moved to viewpoint-centred coordinates, flipped through a sphere
    of radius 10**gamma times the largest range, and the convex hull of the
    flipped set plus the origin is taken; hull vertices other than the origin
    are visible.

    Raises:
        DataError: "empty input" or "degenerate geometry" when every point
            coincides with the viewpoint.
    """
    if len(cloud) == 0:
        raise DataError('empty input')
    relative = cloud.points - as_point(viewpoint)
    ranges = np.linalg.norm(relative, axis=1)
    usable = np.flatnonzero(ranges > 1e-12)
    if len(usable) == 0:
        raise DataError('degenerate geometry')
    if len(usable) <= 3:
        return usable

    relative, ranges = relative[usable], ranges[usable]
    sphere_radius = ranges.max() * 10.0 ** gamma
    flipped = relative + 2.0 * (sphere_radius - ranges)[:, None] * relative / ranges[:, None]
    hull_input = np.vstack([flipped, np.zeros(3)])
    try:
        vertices = ConvexHull(hull_input).vertices
    except QhullError:
        # Coplanar input: joggle so qhull can still report extreme points.
        vertices = ConvexHull(hull_input, qhull_options='QJ').vertices
    vertices = vertices[vertices < len(usable)]
    return np.sort(usable[vertices])


def render_depth(cloud: PointCloud, camera: CameraModel) -> DepthImage:
    """
    Z-buffer the cloud into a millimetre depth image.

    Each point lands on its nearest pixel; the smallest depth wins and
    untouched pixels stay 0.
    """
    depth_mm = np.zeros((camera.height, camera.width), dtype=np.uint16)
    if len(cloud):
        uv, depth, valid = project_points(camera, cloud.points)
        columns, rows, inside = rasterize(uv, camera.width, camera.height)
        hit = np.flatnonzero(valid & inside)
        values = np.clip(np.floor(depth[hit] * DEPTH_SCALE + 0.5), 1, MAX_DEPTH_MM)
        pixel_ids = rows[hit] * camera.width + columns[hit]
        winners = nearest_per_pixel(pixel_ids, values)
        depth_mm.reshape(-1)[pixel_ids[winners]] = values[winners].astype(np.uint16)
    return DepthImage(depth_mm, camera)


def resize_depth(image: DepthImage, size: int) -> DepthImage:
    """
    Bilinear resize to size x size treating 0 as missing.

    Missing samples are excluded from the interpolation weights; an output
    pixel whose contributors are all missing stays 0.
    """
    source = image.depth.astype(np.float64)
    valid = (image.depth > 0).astype(np.float64)

    def axis_weights(out_size: int, in_size: int):
        coordinates = (np.arange(out_size) + 0.5) * in_size / out_size - 0.5
        coordinates = np.clip(coordinates, 0, in_size - 1)
        low = np.floor(coordinates).astype(np.int64)
        high = np.minimum(low + 1, in_size - 1)
        return low, high, coordinates - low

    r0, r1, wr = axis_weights(size, image.height)
    c0, c1, wc = axis_weights(size, image.width)

    def sample(grid: np.ndarray) -> np.ndarray:
        top = grid[r0][:, c0] * (1 - wc) + grid[r0][:, c1] * wc
        bottom = grid[r1][:, c0] * (1 - wc) + grid[r1][:, c1] * wc
        return top * (1 - wr)[:, None] + bottom * wr[:, None]

    weight = sample(valid)
    total = sample(source * valid)
    resized = np.zeros((size, size), dtype=np.uint16)
    filled = weight > 1e-12
    resized[filled] = np.clip(np.floor(total[filled] / weight[filled] + 0.5), 1, MAX_DEPTH_MM)
    return DepthImage(resized, image.camera.scaled(size, size), pose=image.pose)


def render_view(
    surface: PointCloud,
    camera: CameraModel,
    config: RenderConfig,
    pose: tuple[float, float, float] | None = None,
) -> DepthImage:
    """One view: to camera frame → hidden point removal → z-buffer → resize."""
    local = transform_cloud(camera.rotation, camera.translation, surface)
    visible = hidden_point_removal(local, np.zeros(3), config.hpr_gamma)
    full = render_depth(local.subset(visible), camera.in_camera_frame())
    full = DepthImage(full.depth, camera, pose=pose)
    return resize_depth(full, config.output_size)


def render_views(
    mesh: TriangleMesh,
    config: RenderConfig = RenderConfig(),
    seed: int = 0,
    jobs: int = 1,
) -> list[DepthImage]:
    """
    Render every configured view of ``mesh``.

    The surface sample is shared by all views, so output is deterministic given
    (mesh, config, seed) regardless of ``jobs``.
    """
    center, radius = mesh.bounding_sphere()
    noise = config.noise_sigma if config.noise_sigma is not None else 0.005 * radius
    surface = sample_surface(mesh, config.sample_count, noise, seed)
    cameras = generate_poses(config, center, radius)
    poses = config.pose_angles()

    def render(index: int) -> DepthImage:
        return render_view(surface, cameras[index], config, poses[index])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            views = list(executor.map(render, range(len(cameras))))
    else:
        views = [render(i) for i in range(len(cameras))]
    logger.debug('Rendered %d views (radius %.4f, noise %.5f)', len(views), radius, noise)
    return views
