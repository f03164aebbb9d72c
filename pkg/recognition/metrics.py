"""
Instance-wise and pixel-wise precision, recall and F-score.

An instance prediction counts as a true positive when it is matched one-to-one
to a ground-truth instance of the same category with intersection over union
strictly above 0.5. Pixel-wise counts compare, per category, the union of the
predicted masks with the union of the ground-truth masks.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import DataError
from .formats import FORMAT_VERSION, read_json, read_mask_png

logger = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5


class Instance(NamedTuple):
    category: str
    mask: np.ndarray


@dataclass(eq=False)
class AnnotatedFrame:
    frame_id: str
    ground_truth: list[Instance] = field(default_factory=list)
    predictions: list[Instance] = field(default_factory=list)

    def __post_init__(self):
        self.ground_truth = [Instance(c, np.asarray(m, dtype=bool)) for c, m in self.ground_truth]
        self.predictions = [Instance(c, np.asarray(m, dtype=bool)) for c, m in self.predictions]
        shapes = {instance.mask.shape for instance in self.ground_truth + self.predictions}
        if len(shapes) > 1:
            raise DataError('resolution mismatch')

    @property
    def categories(self) -> set[str]:
        return {instance.category for instance in self.ground_truth + self.predictions}


@dataclass
class CategoryCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: CategoryCounts) -> CategoryCounts:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


@dataclass(frozen=True)
class CategoryScore:
    precision: float
    recall: float
    f_score: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    per_category: dict[str, CategoryScore]
    overall: CategoryScore

    def as_dict(self) -> dict:
        return {
            'per_category': {name: asdict(score) for name, score in sorted(self.per_category.items())},
            'overall': asdict(self.overall),
        }


def f_score(p: float, r: float) -> float:
    """
    Harmonic mean 2pr/(p + r), defined as 0 when p + r = 0.

    Raises:
        DataError: for inputs outside [0, 1].
    """
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise DataError(f'precision and recall must lie in [0, 1], got ({p}, {r})')
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def _score(counts: CategoryCounts) -> CategoryScore:
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return CategoryScore(precision, recall, f_score(precision, recall), counts.tp, counts.fp, counts.fn)


def _report(counts: dict[str, CategoryCounts]) -> MetricsReport:
    per_category = {name: _score(c) for name, c in sorted(counts.items())}
    if per_category:
        precision = float(np.mean([s.precision for s in per_category.values()]))
        recall = float(np.mean([s.recall for s in per_category.values()]))
    else:
        precision = recall = 0.0
    overall = CategoryScore(
        precision,
        recall,
        f_score(precision, recall),
        sum(c.tp for c in counts.values()),
        sum(c.fp for c in counts.values()),
        sum(c.fn for c in counts.values()),
    )
    return MetricsReport(per_category, overall)


def intersection_over_union(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DataError('resolution mismatch')
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def match_instances(frame: AnnotatedFrame) -> dict[str, CategoryCounts]:
    """
    Greedy one-to-one matching in descending IoU order; only same-category
    pairs above the threshold are eligible.
    """
    candidates = []
    for p, prediction in enumerate(frame.predictions):
        for g, truth in enumerate(frame.ground_truth):
            if prediction.category != truth.category:
                continue
            overlap = intersection_over_union(prediction.mask, truth.mask)
            if overlap > IOU_THRESHOLD:
                candidates.append((-overlap, p, g))
    candidates.sort()

    matched_predictions, matched_truths = set(), set()
    for _, p, g in candidates:
        if p not in matched_predictions and g not in matched_truths:
            matched_predictions.add(p)
            matched_truths.add(g)

    counts = {name: CategoryCounts() for name in frame.categories}
    for p, prediction in enumerate(frame.predictions):
        if p in matched_predictions:
            counts[prediction.category].tp += 1
        else:
            counts[prediction.category].fp += 1
    for g, truth in enumerate(frame.ground_truth):
        if g not in matched_truths:
            counts[truth.category].fn += 1
    return counts


def instance_metrics(frames: list[AnnotatedFrame]) -> MetricsReport:
    """Instance counts summed over frames, then per-category and averaged scores."""
    totals: dict[str, CategoryCounts] = {}
    for frame in frames:
        for name, counts in match_instances(frame).items():
            totals.setdefault(name, CategoryCounts())
            totals[name] += counts
    return _report(totals)


def _union(instances: list[Instance], category: str, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for instance in instances:
        if instance.category == category:
            mask |= instance.mask
    return mask


def pixel_metrics(frames: list[AnnotatedFrame]) -> MetricsReport:
    """
    Pixel counts per category aggregated over frames before scoring.

    Raises:
        DataError: when no frame is given.
    """
    if not frames:
        raise DataError('no frames to evaluate')
    totals: dict[str, CategoryCounts] = {}
    for frame in frames:
        instances = frame.ground_truth + frame.predictions
        if not instances:
            continue
        shape = instances[0].mask.shape
        for name in sorted(frame.categories):
            truth = _union(frame.ground_truth, name, shape)
            predicted = _union(frame.predictions, name, shape)
            totals.setdefault(name, CategoryCounts())
            totals[name] += CategoryCounts(
                tp=int(np.count_nonzero(predicted & truth)),
                fp=int(np.count_nonzero(predicted & ~truth)),
                fn=int(np.count_nonzero(truth & ~predicted)),
            )
    return _report(totals)


def evaluate_frames(frames: list[AnnotatedFrame]) -> dict:
    """Versioned metrics document with both the instance and the pixel report."""
    document = {
        'version': FORMAT_VERSION,
        'frames': len(frames),
        'instance': instance_metrics(frames).as_dict(),
        'pixel': pixel_metrics(frames).as_dict() if frames else None,
    }
    logger.info('Evaluated %d frames', len(frames))
    return document


def format_table(reports: dict[str, MetricsReport]) -> str:
    """
    Aligned text table: one row per (metric, report) pair, one column per
    category plus the averaged overall column, scores in percent.
    """
    categories = sorted({name for report in reports.values() for name in report.per_category})
    header = ['', *categories, 'overall']
    rows = [header]
    for label, report in reports.items():
        for metric, title in (('precision', 'Precision'), ('recall', 'Recall'), ('f_score', 'F-Score')):
            row = [f'{title} ({label})']
            for name in categories:
                score = report.per_category.get(name)
                row.append(f'{100 * getattr(score, metric):.2f}' if score else '-')
            row.append(f'{100 * getattr(report.overall, metric):.2f}')
            rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = [
        '  '.join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))
        for row in rows
    ]
    return '\n'.join(line.rstrip() for line in lines) + '\n'


def load_frames(index_path) -> list[AnnotatedFrame]:
    """
    Read a frame index: ``{"version": 1, "frames": [{"id", "ground_truth":
    [{"category", "mask"}], "predictions": [...]}]}`` with mask PNG paths
    relative to the index file.
    """
    index_path = Path(index_path)
    document = read_json(index_path)
    if document.get('version') != FORMAT_VERSION:
        raise DataError(f"unsupported index version {document.get('version')!r}")
    root = index_path.parent
    frames = []
    for entry in document.get('frames', []):
        try:
            frames.append(AnnotatedFrame(
                frame_id=entry['id'],
                ground_truth=[Instance(i['category'], read_mask_png(root / i['mask'])) for i in entry['ground_truth']],
                predictions=[Instance(i['category'], read_mask_png(root / i['mask'])) for i in entry['predictions']],
            ))
        except KeyError as exc:
            raise DataError(f'malformed frame index {index_path}: missing {exc}') from exc
    return frames
