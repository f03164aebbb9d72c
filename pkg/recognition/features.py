"""
Feature providers for proposal crops.

Handcrafted descriptors stand in for network activations: a 56-dimensional
colour/gradient descriptor for RGB crops and a 32-dimensional depth/gradient/
normal-angle descriptor for raw depth crops. Externally computed features can
be loaded from CSV instead; the classifier stages only see fixed-length
vectors.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .exceptions import DataError

RGB_DIMENSION = 56
DEPTH_DIMENSION = 32
COLOR_BINS = 16
ORIENTATION_BINS = 8
DEPTH_BINS = 16
NORMAL_BINS = 8


class Modality(str, enum.Enum):
    RGB = 'rgb'
    DEPTH = 'depth'
    FUSED = 'fused'


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """
    A fixed-length feature vector.

    Fused vectors record ``split``, the length of the leading RGB block.
    """

    values: np.ndarray
    modality: Modality
    split: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise DataError('invalid value')
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'modality', Modality(self.modality))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class FeatureProvider:
    """Named source of feature vectors of one modality and dimension."""

    name: str
    dimension: int
    modality: Modality

    def __post_init__(self):
        if self.dimension <= 0:
            raise DataError('dimension must be positive')

    def validate(self, vector: FeatureVector) -> FeatureVector:
        if len(vector) != self.dimension or vector.modality != self.modality:
            raise DataError('inconsistent dimension')
        return vector


HANDCRAFTED_RGB = FeatureProvider('handcrafted-rgb', RGB_DIMENSION, Modality.RGB)
HANDCRAFTED_DEPTH = FeatureProvider('handcrafted-depth', DEPTH_DIMENSION, Modality.DEPTH)


def _unit(values: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(values)
    return values / norm if norm > 0 else values


def _orientation_histogram(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Magnitude-weighted orientation histogram over [0, 2π), unit mass or all zeros."""
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    bins = np.minimum((angle / (2 * np.pi) * ORIENTATION_BINS).astype(np.int64), ORIENTATION_BINS - 1)
    histogram = np.bincount(bins, weights=magnitude, minlength=ORIENTATION_BINS)
    total = histogram.sum()
    return histogram / total if total > 1e-12 else np.zeros(ORIENTATION_BINS)


def extract_rgb_features(crop: np.ndarray, mask: np.ndarray | None = None) -> FeatureVector:
    """
    56-d descriptor: 16-bin histogram per colour channel plus an 8-bin gradient
    orientation histogram on luminance, L2-normalized. ``mask`` restricts the
    statistics to object pixels.

    Raises:
        DataError: "empty crop" when no pixel is selected.
    """
    crop = np.asarray(crop)
    if crop.ndim != 3 or crop.shape[2] != 3 or crop.shape[0] == 0 or crop.shape[1] == 0:
        raise DataError('empty crop')
    selected = np.ones(crop.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not selected.any():
        raise DataError('empty crop')

    pixels = crop[selected].astype(np.int64)
    color = np.concatenate([
        np.bincount(pixels[:, channel] * COLOR_BINS // 256, minlength=COLOR_BINS) / len(pixels)
        for channel in range(3)
    ])

    luminance = crop.astype(np.float64).mean(axis=2)
    if min(luminance.shape) >= 2:
        gy, gx = np.gradient(luminance)
        gradient = _orientation_histogram(gx[selected], gy[selected])
    else:
        gradient = np.zeros(ORIENTATION_BINS)
    return FeatureVector(_unit(np.concatenate([color, gradient])), Modality.RGB)


def extract_depth_features(crop: np.ndarray, mask: np.ndarray | None = None) -> FeatureVector:
    """
    32-d descriptor of a raw depth crop (uint16 millimetres, 0 = missing):
    16-bin histogram of min-max scaled depth, 8-bin depth-gradient orientation
    histogram and 8-bin histogram of surface-normal tilt (0-90 degrees) from
    depth derivatives, L2-normalized. Offsets in depth do not change it.

    Raises:
        DataError: "no valid depth" when every selected pixel is 0.
    """
    depth = np.asarray(crop, dtype=np.float64)
    if depth.ndim != 2 or depth.size == 0:
        raise DataError('no valid depth')
    valid = depth > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise DataError('no valid depth')

    values = depth[valid]
    low, high = values.min(), values.max()
    scaled = (values - low) / (high - low) if high > low else np.zeros_like(values)
    bins = np.minimum((scaled * DEPTH_BINS).astype(np.int64), DEPTH_BINS - 1)
    depth_histogram = np.bincount(bins, minlength=DEPTH_BINS) / len(values)

    gradient = np.zeros(ORIENTATION_BINS)
    normal = np.zeros(NORMAL_BINS)
    if min(depth.shape) >= 2:
        # Derivatives only where the whole 3x3 neighbourhood holds depth.
        interior = ndimage.binary_erosion(valid, structure=np.ones((3, 3)), border_value=1)
        if interior.any():
            gy, gx = np.gradient(depth)
            gx, gy = gx[interior], gy[interior]
            gradient = _orientation_histogram(gx, gy)
            tilt = np.degrees(np.arctan(np.hypot(gx, gy)))
            tilt_bins = np.minimum((tilt / 90.0 * NORMAL_BINS).astype(np.int64), NORMAL_BINS - 1)
            normal = np.bincount(tilt_bins, minlength=NORMAL_BINS) / len(tilt)
    return FeatureVector(_unit(np.concatenate([depth_histogram, gradient, normal])), Modality.DEPTH)


def concat_features(f_rgb: FeatureVector, f_depth: FeatureVector) -> FeatureVector:
    """
    Fused vector [rgb | depth] recording the split index for the product kernel.

    Raises:
        DataError: "modality mismatch" unless the inputs are rgb and depth.
    """
    if f_rgb.modality != Modality.RGB or f_depth.modality != Modality.DEPTH:
        raise DataError('modality mismatch')
    return FeatureVector(
        np.concatenate([f_rgb.values, f_depth.values]),
        Modality.FUSED,
        split=len(f_rgb),
    )


def fuse_matrices(rgb: np.ndarray, depth: np.ndarray) -> tuple[np.ndarray, int]:
    """Row-wise concatenation of aligned RGB and depth matrices plus the split index."""
    if len(rgb) != len(depth):
        raise DataError('inconsistent dimension')
    rgb = np.asarray(rgb, dtype=np.float64).reshape(len(rgb), -1)
    depth = np.asarray(depth, dtype=np.float64).reshape(len(depth), -1)
    return np.hstack([rgb, depth]), rgb.shape[1]


def load_feature_matrix(path) -> tuple[list[str], np.ndarray]:
    """
    Read a feature CSV with header ``id,f0,f1,...``.

    Returns row-aligned ids and an (n, d) float matrix; an empty file gives no
    ids and a 0x0 matrix.

    Raises:
        DataError: "inconsistent dimension" for ragged rows, "invalid value"
            for unparsable or non-finite entries.
    """
    try:
        with open(path, newline='') as handle:
            rows = [row for row in csv.reader(handle) if row]
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc
    if rows and rows[0][0].strip() == 'id':
        rows = rows[1:]
    if not rows:
        return [], np.zeros((0, 0))

    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise DataError('inconsistent dimension')
    ids = [row[0] for row in rows]
    try:
        matrix = np.array([[float(value) for value in row[1:]] for row in rows])
    except ValueError as exc:
        raise DataError('invalid value') from exc
    if not np.all(np.isfinite(matrix)):
        raise DataError('invalid value')
    return ids, matrix


def write_feature_matrix(path, ids: list[str], matrix: np.ndarray) -> None:
    """Write ``id,f0,...`` CSV with round-trip exact float text."""
    matrix = np.asarray(matrix, dtype=np.float64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['id'] + [f'f{i}' for i in range(matrix.shape[1] if matrix.ndim == 2 else 0)])
        for identifier, row in zip(ids, matrix):
            writer.writerow([identifier] + [repr(float(v)) for v in row])
