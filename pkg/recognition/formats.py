"""
File formats shared by the pipeline stages.

This module contains readers and writers for:
- PLY point clouds (ASCII and binary little-endian)
- plain-text camera models
- OFF triangle meshes (polygons fan-triangulated on load)
- PNG masks (8-bit), RGB crops and 16-bit depth images
- deterministic JSON and JSON-lines documents
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from .exceptions import DataError
from .geometry import CameraModel, PointCloud, estimate_normals_masked

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_PLY_TYPES = {
    'char': 'i1', 'int8': 'i1', 'uchar': 'u1', 'uint8': 'u1',
    'short': 'i2', 'int16': 'i2', 'ushort': 'u2', 'uint16': 'u2',
    'int': 'i4', 'int32': 'i4', 'uint': 'u4', 'uint32': 'u4',
    'float': 'f4', 'float32': 'f4', 'double': 'f8', 'float64': 'f8',
}


def _parse_ply_header(handle) -> tuple[str, int, list[tuple[str, str]]]:
    if handle.readline().strip() != b'ply':
        raise DataError('corrupt PLY: missing magic')
    fmt = None
    vertex_count = None
    properties: list[tuple[str, str]] = []
    element = None
    while True:
        line = handle.readline()
        if not line:
            raise DataError('corrupt PLY: unterminated header')
        tokens = line.decode('ascii', errors='replace').split()
        if not tokens or tokens[0] in ('comment', 'obj_info'):
            continue
        if tokens[0] == 'end_header':
            break
        if tokens[0] == 'format':
            fmt = tokens[1]
        elif tokens[0] == 'element':
            element = tokens[1]
            if element == 'vertex':
                vertex_count = int(tokens[2])
        elif tokens[0] == 'property' and element == 'vertex':
            if tokens[1] == 'list' or tokens[1] not in _PLY_TYPES:
                raise DataError(f'corrupt PLY: unsupported vertex property {tokens[1:]}')
            properties.append((tokens[2], _PLY_TYPES[tokens[1]]))
    if fmt not in ('ascii', 'binary_little_endian') or vertex_count is None:
        raise DataError('corrupt PLY: unsupported format or missing vertex element')
    return fmt, vertex_count, properties


def _repair_normals(points: np.ndarray, normals: np.ndarray) -> np.ndarray | None:
    """
    Normalize stored normals, re-estimating rows that are zero or not finite.

    A bad row gets a PCA normal from its neighbours, oriented like the nearest
    good stored normal; if its neighbourhood is collinear it takes that stored
    normal as is. Returns None only when no row can be kept.
    """
    lengths = np.linalg.norm(normals, axis=1)
    good = np.isfinite(lengths) & (lengths > 0)
    if good.all():
        return normals / lengths[:, None]
    if not good.any() or len(points) < 4:
        return None

    repaired = normals.copy()
    repaired[good] /= lengths[good, None]
    bad = np.flatnonzero(~good)
    _, nearest = cKDTree(points[good]).query(points[bad])
    reference = repaired[good][nearest]

    estimated, valid = estimate_normals_masked(
        PointCloud(points=points), k=min(10, len(points) - 1))
    fill = estimated.normals[bad]
    fill[np.einsum('ij,ij->i', fill, reference) < 0] *= -1
    repaired[bad] = np.where(valid[bad, None], fill, reference)
    logger.warning('Re-estimated %d unusable stored normals', len(bad))
    return repaired


def read_ply(path) -> PointCloud:
    """
    Read a PLY point cloud.

    x, y, z are required; red, green, blue and nx, ny, nz are optional; any
    other vertex property is ignored. Normals are renormalized on load; a
    zero-length normal is re-estimated from its neighbours without touching the
    other rows.

    Raises:
        DataError: for unreadable or malformed files.
    """
    try:
        with open(path, 'rb') as handle:
            fmt, count, properties = _parse_ply_header(handle)
            dtype = np.dtype([(name, '<' + code) for name, code in properties])
            if fmt == 'ascii':
                text = handle.read().decode('ascii', errors='replace').split()
                width = len(properties)
                if len(text) < count * width:
                    raise DataError('corrupt PLY: truncated vertex data')
                flat = np.asarray(text[:count * width], dtype=np.float64).reshape(count, width)
                data = {name: flat[:, i] for i, (name, _) in enumerate(properties)}
            else:
                raw = handle.read(count * dtype.itemsize)
                if len(raw) < count * dtype.itemsize:
                    raise DataError('corrupt PLY: truncated vertex data')
                records = np.frombuffer(raw, dtype=dtype, count=count)
                data = {name: records[name].astype(np.float64) for name, _ in properties}
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f'corrupt PLY: {exc}') from exc

    if not {'x', 'y', 'z'} <= data.keys():
        raise DataError('corrupt PLY: x, y, z properties required')
    points = np.column_stack([data['x'], data['y'], data['z']])
    colors = None
    if {'red', 'green', 'blue'} <= data.keys():
        colors = np.column_stack([data['red'], data['green'], data['blue']])
    normals = None
    if {'nx', 'ny', 'nz'} <= data.keys():
        normals = np.column_stack([data['nx'], data['ny'], data['nz']])
        normals = _repair_normals(points, normals)
    return PointCloud(points=points, colors=colors, normals=normals)


def write_ply(path, cloud: PointCloud, labels: np.ndarray | None = None, binary: bool = True) -> None:
    """Write a PLY cloud; ``labels`` adds an integer ``label`` vertex property."""
    fields = [('x', '<f8'), ('y', '<f8'), ('z', '<f8')]
    if cloud.colors is not None:
        fields += [('red', 'u1'), ('green', 'u1'), ('blue', 'u1')]
    if cloud.normals is not None:
        fields += [('nx', '<f8'), ('ny', '<f8'), ('nz', '<f8')]
    if labels is not None:
        fields += [('label', '<i4')]
    records = np.zeros(len(cloud), dtype=np.dtype(fields))
    records['x'], records['y'], records['z'] = cloud.points.T
    if cloud.colors is not None:
        records['red'], records['green'], records['blue'] = cloud.colors.T
    if cloud.normals is not None:
        records['nx'], records['ny'], records['nz'] = cloud.normals.T
    if labels is not None:
        records['label'] = np.asarray(labels, dtype=np.int32)

    type_names = {'<f8': 'double', 'u1': 'uchar', '<i4': 'int'}
    header = ['ply', f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f'element vertex {len(cloud)}']
    header += [f'property {type_names[code]} {name}' for name, code in fields]
    header.append('end_header')
    with open(path, 'wb') as handle:
        handle.write(('\n'.join(header) + '\n').encode('ascii'))
        if binary:
            handle.write(records.tobytes())
        else:
            for record in records:
                handle.write((' '.join(repr(v.item()) for v in record) + '\n').encode('ascii'))


def read_camera(path) -> CameraModel:
    """
    Read a camera: 9 intrinsic values (row-major C), 12 extrinsic values
    (row-major [R|t]), width, height. Whitespace separated; '#' starts a comment.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc
    tokens = ' '.join(line.split('#', 1)[0] for line in lines).split()
    if len(tokens) != 23:
        raise DataError(f'camera file {path} must hold 23 values, found {len(tokens)}')
    try:
        values = [float(token) for token in tokens]
    except ValueError as exc:
        raise DataError(f'camera file {path}: {exc}') from exc
    extrinsics = np.array(values[9:21]).reshape(3, 4)
    return CameraModel(
        intrinsics=np.array(values[:9]).reshape(3, 3),
        rotation=extrinsics[:, :3],
        translation=extrinsics[:, 3],
        width=int(values[21]),
        height=int(values[22]),
    )


def write_camera(path, camera: CameraModel) -> None:
    extrinsics = np.hstack([camera.rotation, camera.translation[:, None]])
    rows = ['# intrinsics'] + [' '.join(repr(float(v)) for v in row) for row in camera.intrinsics]
    rows += ['# extrinsics [R|t]'] + [' '.join(repr(float(v)) for v in row) for row in extrinsics]
    rows += ['# width height', f'{camera.width} {camera.height}']
    Path(path).write_text('\n'.join(rows) + '\n')


def read_off(path):
    """
    Read an OFF mesh, fan-triangulating polygonal faces and dropping
    zero-area triangles.
    """
    from .synthesis import TriangleMesh

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc
    lines = [line.split('#', 1)[0].strip() for line in text.splitlines()]
    lines = [line for line in lines if line]
    if not lines or not lines[0].startswith('OFF'):
        raise DataError(f'corrupt OFF: missing header in {path}')
    # Some ModelNet files glue the counts onto the header ("OFF490 518 0").
    head = lines[0][3:].split()
    body = lines[1:]
    if not head:
        head = body[0].split()
        body = body[1:]
    try:
        n_vertices, n_faces = int(head[0]), int(head[1])
        vertices = np.array([[float(v) for v in line.split()[:3]] for line in body[:n_vertices]])
        triangles = []
        for line in body[n_vertices:n_vertices + n_faces]:
            values = [int(v) for v in line.split()]
            polygon = values[1:1 + values[0]]
            triangles += [(polygon[0], polygon[i], polygon[i + 1]) for i in range(1, len(polygon) - 1)]
    except (ValueError, IndexError) as exc:
        raise DataError(f'corrupt OFF: {exc}') from exc
    if len(vertices) != n_vertices:
        raise DataError('corrupt OFF: truncated vertex list')
    faces = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(vertices.reshape(-1, 3), faces).cleaned()


def write_off(path, mesh) -> None:
    rows = ['OFF', f'{len(mesh.vertices)} {len(mesh.faces)} 0']
    rows += [' '.join(repr(float(v)) for v in vertex) for vertex in mesh.vertices]
    rows += [f'3 {a} {b} {c}' for a, b, c in mesh.faces]
    Path(path).write_text('\n'.join(rows) + '\n')


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def read_mask_png(path) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.array(image.convert('L')) > 127
    except OSError as exc:
        raise DataError(f'cannot read mask {path}: {exc}') from exc


def write_rgb_png(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def read_rgb_png(path) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.array(image.convert('RGB'))
    except OSError as exc:
        raise DataError(f'cannot read image {path}: {exc}') from exc


def write_depth_png(path, depth_mm: np.ndarray) -> None:
    """Write a 16-bit grayscale PNG of millimetre depths (0 = no return)."""
    Image.fromarray(np.asarray(depth_mm, dtype=np.uint16)).save(path)


def read_depth_png(path) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.array(image).astype(np.uint16)
    except OSError as exc:
        raise DataError(f'cannot read depth image {path}: {exc}') from exc


def dumps(document) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(document, sort_keys=True, indent=2) + '\n'


def write_json(path, document) -> None:
    """Write ``document`` atomically (temp file + rename)."""
    _atomic_write(path, dumps(document))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc


def write_jsonl(path, records) -> None:
    _atomic_write(path, ''.join(json.dumps(r, sort_keys=True) + '\n' for r in records))


def read_jsonl(path) -> list:
    try:
        lines = Path(path).read_text().splitlines()
        return [json.loads(line) for line in lines if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.')
    try:
        with os.fdopen(fd, 'w') as handle:
            handle.write(text)
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.unlink(temp)
        raise
