"""
Synthetic tabletop scenes and primitive meshes.

Scenes are a textured support plane with 2-6 well separated objects (balls,
boxes and cans) seen by an oblique camera. Every object keeps its category,
point indices and centroid, so scenes double as densely annotated frames.
``write_fixture`` lays a complete pipeline fixture out on disk.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .formats import FORMAT_VERSION, write_camera, write_json, write_mask_png, write_off, write_ply
from .geometry import CameraModel, PointCloud, look_at
from .objectness import proposal_to_mask
from .synthesis import TriangleMesh, sample_surface

logger = logging.getLogger(__name__)

CATEGORIES = ('ball', 'box', 'can')
BASE_COLORS = {'ball': (200, 60, 50), 'box': (50, 90, 200), 'can': (60, 170, 80)}
TABLE_COLOR = (150, 140, 120)
TABLE_HALF_SIZE = 0.3
SLOT_SPACING = 0.18


def icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere."""
    t = (1.0 + 5 ** 0.5) / 2.0
    vertices = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    vertices = [np.array(v, dtype=np.float64) for v in vertices]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        midpoints: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                vertices.append((vertices[a] + vertices[b]) / 2.0)
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    points = np.array(vertices)
    points = radius * points / np.linalg.norm(points, axis=1, keepdims=True) + np.asarray(center)
    return TriangleMesh(points, np.array(faces))


def box(extents=(1.0, 1.0, 1.0), corner=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box spanning ``corner`` to ``corner + extents``."""
    ex, ey, ez = extents
    vertices = np.array([
        (x, y, z) for x in (0.0, ex) for y in (0.0, ey) for z in (0.0, ez)
    ]) + np.asarray(corner)
    faces = np.array([
        (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
        (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
        (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),
    ])
    return TriangleMesh(vertices, faces)


def cylinder(radius: float = 1.0, height: float = 1.0, segments: int = 24, base=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed cylinder standing on ``base`` along +z."""
    angles = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring = np.column_stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(segments)])
    vertices = np.vstack([ring, ring + [0.0, 0.0, height], [[0.0, 0.0, 0.0], [0.0, 0.0, height]]])
    bottom, top = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, j, segments + j), (i, segments + j, segments + i)]
        faces += [(bottom, j, i), (top, segments + i, segments + j)]
    return TriangleMesh(vertices + np.asarray(base), np.array(faces))


def object_mesh(category: str, rng: np.random.Generator, position=(0.0, 0.0)) -> TriangleMesh:
    """A randomly proportioned primitive of ``category`` resting on z = 0 at ``position``."""
    x, y = position
    if category == 'ball':
        radius = rng.uniform(0.035, 0.055)
        return icosphere(radius, 2, center=(x, y, radius))
    if category == 'box':
        ex, ey, ez = rng.uniform(0.05, 0.09, size=3)
        return box((ex, ey, ez), corner=(x - ex / 2, y - ey / 2, 0.0))
    if category == 'can':
        radius, height = rng.uniform(0.025, 0.04), rng.uniform(0.07, 0.11)
        return cylinder(radius, height, base=(x, y, 0.0))
    raise DataError(f'unknown category {category!r}')


def scene_camera() -> CameraModel:
    """Oblique 320x240 camera looking at the table centre."""
    rotation, translation = look_at((0.0, -0.7, 0.9), (0.0, 0.0, 0.0))
    return CameraModel.from_parameters(300.0, (159.5, 119.5), 320, 240, rotation, translation)


@dataclass(frozen=True, eq=False)
class SceneObject:
    category: str
    indices: np.ndarray
    centroid: np.ndarray


@dataclass(frozen=True, eq=False)
class Scene:
    frame_id: str
    cloud: PointCloud
    camera: CameraModel
    objects: list[SceneObject]

    @property
    def plane_indices(self) -> np.ndarray:
        on_objects = np.zeros(len(self.cloud), dtype=bool)
        for item in self.objects:
            on_objects[item.indices] = True
        return np.flatnonzero(~on_objects)

    def object_masks(self) -> list[np.ndarray]:
        return [proposal_to_mask(item.indices, self.cloud, self.camera).mask for item in self.objects]


def _colors(rng: np.random.Generator, base, count: int, instance_jitter: int) -> np.ndarray:
    shade = np.asarray(base) + rng.integers(-instance_jitter, instance_jitter + 1, size=3)
    return np.clip(shade + rng.integers(-3, 4, size=(count, 3)), 0, 255)


def generate_scene(
    seed: int,
    frame_id: str = '',
    n_objects: int | None = None,
    categories=CATEGORIES,
    density: float = 20000.0,
    noise: float = 0.001,
) -> Scene:
    """
    One tabletop frame. Objects occupy distinct slots of a 3x3 grid, so every
    pair is separated by several centimetres.
    """
    rng = np.random.default_rng(seed)
    n_objects = int(rng.integers(2, 7)) if n_objects is None else n_objects
    if not 0 < n_objects <= 9:
        raise DataError('a scene holds between 1 and 9 objects')

    table_count = int((2 * TABLE_HALF_SIZE) ** 2 * density)
    table = np.column_stack([
        rng.uniform(-TABLE_HALF_SIZE, TABLE_HALF_SIZE, size=(table_count, 2)),
        rng.normal(0.0, noise, size=table_count),
    ])
    points = [table]
    colors = [_colors(rng, TABLE_COLOR, table_count, 0)]

    slots = [(dx * SLOT_SPACING, dy * SLOT_SPACING) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
    chosen = rng.choice(len(slots), size=n_objects, replace=False)
    objects = []
    offset = table_count
    for slot in chosen:
        category = str(categories[int(rng.integers(len(categories)))])
        position = np.asarray(slots[slot]) + rng.uniform(-0.01, 0.01, size=2)
        mesh = object_mesh(category, rng, position)
        count = max(int(mesh.face_areas().sum() * density), 50)
        surface = sample_surface(mesh, count, noise, seed=int(rng.integers(2 ** 31)))
        points.append(surface.points)
        colors.append(_colors(rng, BASE_COLORS[category], count, 15))
        indices = np.arange(offset, offset + count)
        objects.append(SceneObject(category, indices, surface.points.mean(axis=0)))
        offset += count

    cloud = PointCloud(np.vstack(points), colors=np.vstack(colors).astype(np.uint8))
    return Scene(frame_id, cloud, scene_camera(), objects)


def model_mesh(category: str, seed: int) -> TriangleMesh:
    """A CAD-like model of ``category`` centred near the origin."""
    return object_mesh(category, np.random.default_rng(seed))


DEFAULT_CONFIG = {
    'pipeline': {'seed': '0', 'render': 'true', 'seeds_per_category': '3'},
    'render': {'sample_count': '4000', 'image_size': '200', 'focal': '200',
               'principal_x': '100', 'principal_y': '100', 'output_size': '64'},
    'gpc': {'tol': '1e-6', 'max_sweeps': '100', 'restarts': '3'},
    'propagation': {'tau': '0.7', 'conflict_policy': 'abandon'},
    'training': {'eta': '1.0', 'epochs': '200', 'learning_rate': '0.5'},
}


def write_fixture(
    root,
    seed: int = 0,
    train_frames: int = 6,
    test_frames: int = 3,
    train_models: int = 2,
    test_models: int = 1,
) -> dict:
    """
    Write a complete pipeline fixture under ``root``:

        frames/train/<id>.ply, frames/train/camera.txt (and test/)
        annotations/<id>/<k>.png   ground-truth object masks
        annotations.json           categories, objects per frame, model splits
        models/{train,test}/<category>/<name>.off
        config.ini

    Returns the annotation document.
    """
    root = Path(root)
    frames = {}
    for split, count in (('train', train_frames), ('test', test_frames)):
        directory = root / 'frames' / split
        directory.mkdir(parents=True, exist_ok=True)
        for index in range(count):
            frame_id = f'{split}_{index:03d}'
            scene = generate_scene(seed * 1000 + len(frames), frame_id)
            write_ply(directory / f'{frame_id}.ply', scene.cloud)
            write_camera(directory / 'camera.txt', scene.camera)
            entries = []
            for k, (item, mask) in enumerate(zip(scene.objects, scene.object_masks())):
                mask_path = Path('annotations') / frame_id / f'{k:03d}.png'
                (root / mask_path).parent.mkdir(parents=True, exist_ok=True)
                write_mask_png(root / mask_path, mask)
                entries.append({
                    'category': item.category,
                    'centroid': item.centroid.tolist(),
                    'mask': mask_path.as_posix(),
                })
            frames[frame_id] = {'split': split, 'objects': entries}

    models = {'train': [], 'test': []}
    for split, count in (('train', train_models), ('test', test_models)):
        for c, category in enumerate(CATEGORIES):
            for index in range(count):
                path = Path('models') / split / category / f'{category}_{index:02d}.off'
                (root / path).parent.mkdir(parents=True, exist_ok=True)
                write_off(root / path, model_mesh(category, seed * 1000 + c * 100 + index + (50 if split == 'test' else 0)))
                models[split].append({'category': category, 'path': path.as_posix()})

    document = {'version': FORMAT_VERSION, 'categories': list(CATEGORIES), 'frames': frames, 'models': models}
    write_json(root / 'annotations.json', document)

    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULT_CONFIG)
    parser['pipeline']['seed'] = str(seed)
    with open(root / 'config.ini', 'w') as handle:
        parser.write(handle)
    logger.info('Fixture written to %s: %d frames, %d models', root, len(frames),
                len(models['train']) + len(models['test']))
    return document
