"""
Unsupervised 3D objectness detection.

Support planes are stripped with RANSAC, the remaining points are voxelized and
voxels are grown into clusters under the connectability criterion

    connectable(p1, p2) = C_d and (C_s or C_c)

with C_d: distance < sigma_d, C_c: intensity gap < sigma_c and C_s: angle
between normals < sigma_s degrees. Each cluster is projected into the image to
give a boundary-aware mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import DataError
from .geometry import (
    CameraModel,
    PointCloud,
    estimate_normals_masked,
    nearest_per_pixel,
    project_points,
    rasterize,
)

logger = logging.getLogger(__name__)

_RANSAC_CHUNK = 64


@dataclass(frozen=True)
class ClusteringParams:
    """Connectability thresholds (meters, 0-255 intensity, degrees) and cluster filters."""

    sigma_d: float = 0.02
    sigma_c: float = 8.0
    sigma_s: float = 10.0
    voxel_leaf: float = 0.01
    min_cluster_points: int = 30
    min_cluster_extent: float = 0.02

    def __post_init__(self):
        for name in ('sigma_d', 'sigma_c', 'sigma_s', 'voxel_leaf'):
            if not getattr(self, name) > 0:
                raise DataError(f'{name} must be positive')
        if self.min_cluster_points < 0 or self.min_cluster_extent < 0:
            raise DataError('cluster filters must be non-negative')


@dataclass(frozen=True)
class PlaneRemovalParams:
    """RANSAC settings for support-plane removal."""

    inlier_threshold: float = 0.01
    min_plane_fraction: float = 0.2
    max_iterations: int = 500
    max_planes: int = 3

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise DataError('inlier_threshold must be positive')
        if not 0 < self.min_plane_fraction <= 1:
            raise DataError('min_plane_fraction must lie in (0, 1]')
        if self.max_iterations < 1 or self.max_planes < 0:
            raise DataError('max_iterations must be >= 1 and max_planes >= 0')


@dataclass(frozen=True, eq=False)
class ObjectnessProposal:
    """One detected cluster: source indices, image mask, tight bbox and 3D centroid."""

    point_indices: np.ndarray
    mask: np.ndarray
    bbox: tuple[int, int, int, int]
    centroid: np.ndarray
    frame_id: str = ''

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """
    Voxelized cloud: integer keys in lexicographic order, one representative
    point per voxel (centroid, renormalized mean normal, mean intensity) and
    the member point indices of each voxel.
    """

    keys: np.ndarray
    representatives: PointCloud
    members: list[np.ndarray] = field(repr=False)


def _fit_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    return normal, -float(normal @ centroid)


def _best_plane(points: np.ndarray, params: PlaneRemovalParams, rng: np.random.Generator) -> np.ndarray:
    """Inlier mask of the best RANSAC plane, refined once by least squares."""
    n = len(points)
    best_inliers = np.zeros(n, dtype=bool)
    best_count = 0
    samples = np.stack([rng.choice(n, size=3, replace=False) for _ in range(params.max_iterations)])
    for start in range(0, len(samples), _RANSAC_CHUNK):
        triples = points[samples[start:start + _RANSAC_CHUNK]]
        normals = np.cross(triples[:, 1] - triples[:, 0], triples[:, 2] - triples[:, 0])
        lengths = np.linalg.norm(normals, axis=1)
        usable = lengths > 1e-12
        if not np.any(usable):
            continue
        normals = normals[usable] / lengths[usable, None]
        offsets = -np.einsum('ij,ij->i', normals, triples[usable, 0])
        inliers = np.abs(points @ normals.T + offsets) < params.inlier_threshold
        counts = inliers.sum(axis=0)
        winner = int(np.argmax(counts))
        if counts[winner] > best_count:
            best_count = int(counts[winner])
            best_inliers = inliers[:, winner]
    if best_count >= 3:
        normal, offset = _fit_plane(points[best_inliers])
        refined = np.abs(points @ normal + offset) < params.inlier_threshold
        if refined.sum() >= best_count:
            best_inliers = refined
    return best_inliers


def remove_planes(
    cloud: PointCloud,
    params: PlaneRemovalParams = PlaneRemovalParams(),
    rng_seed: int = 0,
) -> tuple[PointCloud, list[np.ndarray]]:
    """
    Strip large planes with RANSAC.

    Planes are removed while the best plane's inliers make up at least
    ``min_plane_fraction`` of the input cloud and fewer than ``max_planes``
    have been removed. Returns the remaining cloud and, per removed plane, the
    inlier indices into the input cloud. Deterministic given ``rng_seed``.

    Raises:
        DataError: "empty input" for an empty cloud.
    """
    if len(cloud) == 0:
        raise DataError('empty input')
    rng = np.random.default_rng(rng_seed)
    total = len(cloud)
    remaining = np.arange(total)
    planes: list[np.ndarray] = []
    while len(planes) < params.max_planes and len(remaining) >= 3:
        inliers = _best_plane(cloud.points[remaining], params, rng)
        if inliers.sum() / total < params.min_plane_fraction:
            break
        planes.append(remaining[inliers])
        remaining = remaining[~inliers]
        logger.debug('Removed plane with %d inliers, %d points left', len(planes[-1]), len(remaining))
    if not planes:
        return cloud, planes
    return cloud.subset(remaining), planes


def kept_indices(total: int, planes: list[np.ndarray]) -> np.ndarray:
    """Indices of the input cloud that survived ``remove_planes``."""
    keep = np.ones(total, dtype=bool)
    for plane in planes:
        keep[plane] = False
    return np.flatnonzero(keep)


def _require_prepared(cloud: PointCloud) -> None:
    if not cloud.is_prepared:
        raise DataError('unprepared cloud')


def connectable_pairs(
    points_a: np.ndarray,
    points_b: np.ndarray,
    normals_a: np.ndarray,
    normals_b: np.ndarray,
    intensities_a: np.ndarray,
    intensities_b: np.ndarray,
    params: ClusteringParams,
) -> np.ndarray:
    """Vectorized connectability over aligned pairs of points."""
    distance = np.linalg.norm(points_a - points_b, axis=-1)
    close = distance < params.sigma_d
    similar_color = np.abs(intensities_a - intensities_b) < params.sigma_c
    cosine = np.clip(np.einsum('...i,...i->...', normals_a, normals_b), -1.0, 1.0)
    similar_shape = np.degrees(np.arccos(cosine)) < params.sigma_s
    return close & (similar_shape | similar_color)


def connectable(i: int, j: int, cloud: PointCloud, params: ClusteringParams = ClusteringParams()) -> bool:
    """
    Connectability of points ``i`` and ``j`` of ``cloud``.

    Raises:
        DataError: "unprepared cloud" when normals or intensities are missing.
    """
    _require_prepared(cloud)
    return bool(connectable_pairs(
        cloud.points[i], cloud.points[j],
        cloud.normals[i], cloud.normals[j],
        cloud.intensities[i], cloud.intensities[j],
        params,
    ))


def voxelize(cloud: PointCloud, leaf: float) -> VoxelGrid:
    """Group points into cubic voxels of side ``leaf`` (lexicographic key order)."""
    _require_prepared(cloud)
    if len(cloud) == 0:
        empty = PointCloud(np.zeros((0, 3)), intensities=np.zeros(0), normals=np.zeros((0, 3)))
        return VoxelGrid(np.zeros((0, 3), dtype=np.int64), empty, [])

    keys = np.floor(cloud.points / leaf).astype(np.int64)
    unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    count = len(unique_keys)
    sizes = np.bincount(inverse, minlength=count).astype(np.float64)

    def mean_of(values: np.ndarray) -> np.ndarray:
        sums = np.zeros((count,) + values.shape[1:])
        np.add.at(sums, inverse, values)
        return sums / sizes.reshape((-1,) + (1,) * (values.ndim - 1))

    centroids = mean_of(cloud.points)
    intensities = mean_of(cloud.intensities)
    normals = mean_of(cloud.normals)
    lengths = np.linalg.norm(normals, axis=1)
    order = np.argsort(inverse, kind='stable')
    boundaries = np.cumsum(sizes.astype(np.int64))[:-1]
    members = np.split(order, boundaries)
    # Opposing normals can cancel; fall back to the first member's normal.
    cancelled = lengths < 1e-9
    for v in np.flatnonzero(cancelled):
        normals[v] = cloud.normals[members[v][0]]
        lengths[v] = 1.0
    normals /= lengths[:, None]
    representatives = PointCloud(centroids, intensities=intensities, normals=normals)
    return VoxelGrid(unique_keys, representatives, members)


def _adjacent_voxel_pairs(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All (a, b) pairs of distinct voxels whose keys differ by at most 1 per axis."""
    origin = keys.min(axis=0) - 1
    shifted = keys - origin
    dims = shifted.max(axis=0) + 2
    linear = (shifted[:, 0] * dims[1] + shifted[:, 1]) * dims[2] + shifted[:, 2]
    # np.unique(axis=0) yields lexicographic order, so ``linear`` is sorted.
    offsets = np.array([
        (dx, dy, dz)
        for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ])
    sources, targets = [], []
    for offset in offsets:
        candidate = linear + (offset[0] * dims[1] + offset[1]) * dims[2] + offset[2]
        position = np.searchsorted(linear, candidate)
        position = np.minimum(position, len(linear) - 1)
        hit = linear[position] == candidate
        sources.append(np.flatnonzero(hit))
        targets.append(position[hit])
    return np.concatenate(sources), np.concatenate(targets)


def cluster_proposals(cloud: PointCloud, params: ClusteringParams = ClusteringParams()) -> list[np.ndarray]:
    """
    Cluster a plane-free cloud into objectness proposals.

    Voxel representatives are linked when their voxels are adjacent and they
    are connectable; clusters are the connected components of that graph
    (the fixed point of iterative region growing). Clusters with fewer than
    ``min_cluster_points`` points or a largest bounding-box side below
    ``min_cluster_extent`` are dropped. Clusters are ordered by their first
    voxel in lexicographic grid order and hold sorted point indices.
    """
    if len(cloud) == 0:
        return []
    _require_prepared(cloud)
    grid = voxelize(cloud, params.voxel_leaf)
    reps = grid.representatives
    count = len(grid.keys)

    a, b = _adjacent_voxel_pairs(grid.keys)
    linked = connectable_pairs(
        reps.points[a], reps.points[b],
        reps.normals[a], reps.normals[b],
        reps.intensities[a], reps.intensities[b],
        params,
    )
    graph = coo_matrix((np.ones(int(linked.sum())), (a[linked], b[linked])), shape=(count, count))
    _, labels = connected_components(graph, directed=False)

    clusters = []
    first_voxel = {}
    for voxel, label in enumerate(labels):
        first_voxel.setdefault(label, voxel)
    for label in sorted(first_voxel, key=first_voxel.get):
        voxels = np.flatnonzero(labels == label)
        indices = np.sort(np.concatenate([grid.members[v] for v in voxels]))
        if len(indices) < params.min_cluster_points:
            continue
        extent = np.ptp(cloud.points[indices], axis=0).max()
        if extent < params.min_cluster_extent:
            continue
        clusters.append(indices)
    logger.debug('Clustered %d voxels into %d proposals', count, len(clusters))
    return clusters


def proposal_to_mask(
    indices,
    cloud: PointCloud,
    camera: CameraModel,
    frame_id: str = '',
) -> ObjectnessProposal:
    """
    Rasterize a cluster into a binary mask with a tight bbox and 3D centroid.

    Raises:
        DataError: "off-screen proposal" when no point lands inside the image.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise DataError('off-screen proposal')
    points = cloud.points[indices]
    uv, _, valid = project_points(camera, points)
    columns, rows, inside = rasterize(uv, camera.width, camera.height)
    inside &= valid
    if not np.any(inside):
        raise DataError('off-screen proposal')
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    mask[rows[inside], columns[inside]] = True
    bbox = (
        int(columns[inside].min()), int(rows[inside].min()),
        int(columns[inside].max()), int(rows[inside].max()),
    )
    return ObjectnessProposal(
        point_indices=indices,
        mask=mask,
        bbox=bbox,
        centroid=points.mean(axis=0),
        frame_id=frame_id,
    )


def rasterize_proposal(
    proposal: ObjectnessProposal,
    cloud: PointCloud,
    camera: CameraModel,
) -> tuple[np.ndarray, np.ndarray]:
    """
    RGB crop (h, w, 3 uint8) and depth crop (h, w uint16 millimetres) of the
    proposal's bbox, z-buffered from its own points. Unhit pixels are 0.
    """
    if cloud.colors is None:
        raise DataError('unprepared cloud')
    u_min, v_min, u_max, v_max = proposal.bbox
    height, width = v_max - v_min + 1, u_max - u_min + 1
    points = cloud.points[proposal.point_indices]
    uv, depth, valid = project_points(camera, points)
    columns, rows, inside = rasterize(uv, camera.width, camera.height)
    inside &= valid
    columns, rows = columns[inside] - u_min, rows[inside] - v_min
    depth = depth[inside]
    colors = cloud.colors[proposal.point_indices][inside]

    winners = nearest_per_pixel(rows * width + columns, depth)
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    rgb[rows[winners], columns[winners]] = colors[winners]
    depth_mm = np.zeros((height, width), dtype=np.uint16)
    depth_mm[rows[winners], columns[winners]] = np.clip(np.floor(depth[winners] * 1000.0 + 0.5), 1, 65535)
    return rgb, depth_mm


def detect_objects(
    cloud: PointCloud,
    camera: CameraModel,
    clustering: ClusteringParams = ClusteringParams(),
    plane_removal: PlaneRemovalParams = PlaneRemovalParams(),
    seed: int = 0,
    normal_neighbors: int = 10,
    frame_id: str = '',
) -> list[ObjectnessProposal]:
    """
    Full detector for one frame: normals (facing the camera) → plane removal →
    clustering → masks. Proposal indices refer to ``cloud``; clusters that
    fall entirely off-screen are skipped. Points whose normal neighbourhood
    is collinear (wires, depth-edge streaks) take no part in detection.
    """
    if cloud.intensities is None:
        raise DataError('unprepared cloud')
    usable = np.arange(len(cloud))
    working = cloud
    if cloud.normals is None:
        working, valid = estimate_normals_masked(cloud, k=normal_neighbors, viewpoint=camera.center)
        if not valid.all():
            logger.info('Dropping %d points with degenerate neighbourhoods in frame %s',
                        int(np.count_nonzero(~valid)), frame_id or '-')
            usable = np.flatnonzero(valid)
            working = working.subset(usable)
    remaining, planes = remove_planes(working, plane_removal, rng_seed=seed)
    survivors = usable[kept_indices(len(working), planes)]
    proposals = []
    for local in cluster_proposals(remaining, clustering):
        try:
            proposals.append(proposal_to_mask(survivors[local], cloud, camera, frame_id=frame_id))
        except DataError:
            logger.info('Skipping off-screen cluster of %d points in frame %s', len(local), frame_id)
    logger.info(
        'Frame %s: %d planes removed, %d proposals', frame_id or '-', len(planes), len(proposals)
    )
    return proposals
