"""
File-based pipeline stages.

Every stage reads its inputs from and writes its outputs to documented files,
so the management commands can run stages one by one and ``run_pipeline`` can
chain them. Stochastic stages derive their seeds from the configured seed and
stable names, never from ambient randomness.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError, RecognitionError, StageError
from .features import (
    FeatureVector,
    Modality,
    extract_depth_features,
    extract_rgb_features,
    fuse_matrices,
    load_feature_matrix,
    write_feature_matrix,
)
from .formats import (
    FORMAT_VERSION,
    read_camera,
    read_depth_png,
    read_json,
    read_jsonl,
    read_mask_png,
    read_off,
    read_ply,
    read_rgb_png,
    write_depth_png,
    write_json,
    write_jsonl,
    write_mask_png,
    write_ply,
    write_rgb_png,
)
from .geometry import nearest_per_pixel, project_points, rasterize
from .gpc import GpcModel, KernelHyperparams, TrainingSet, load_model, save_model, train_gpc
from .metrics import AnnotatedFrame, Instance, format_table, instance_metrics, pixel_metrics
from .objectness import ClusteringParams, PlaneRemovalParams, detect_objects, rasterize_proposal
from .propagation import (
    LabeledExample,
    LinearSoftmaxModel,
    PropagationConfig,
    PropagationResult,
    Provenance,
    aggregate_view_predictions,
    attach_features,
    predict_proba,
    propagate_labels,
    save_classifier,
    train_weighted_classifier,
    write_labels_csv,
)
from .synthesis import RenderConfig, render_views

logger = logging.getLogger(__name__)

PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60),
], dtype=np.uint8)


@dataclass(frozen=True)
class GpcSettings:
    tol: float = 1e-6
    max_sweeps: int = 100
    restarts: int = 5
    damping: float = 0.8


@dataclass(frozen=True)
class TrainingSettings:
    eta: float = 1.0
    epochs: int = 200
    learning_rate: float = 0.5
    batch_size: int | None = None


@dataclass(frozen=True)
class PipelineConfig:
    clustering: ClusteringParams = field(default_factory=ClusteringParams)
    plane_removal: PlaneRemovalParams = field(default_factory=PlaneRemovalParams)
    render: RenderConfig = field(default_factory=RenderConfig)
    gpc: GpcSettings = field(default_factory=GpcSettings)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    seed: int = 0
    render_views: bool = True
    seeds_per_category: int = 3

    def as_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), sort_keys=True))

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode()).hexdigest()


def derive_seed(seed: int, *parts) -> int:
    """Stable per-item seed from the run seed and identifying names."""
    text = ':'.join([str(seed), *map(str, parts)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], 'little') & 0x7FFFFFFF


def _map(function, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(function, items))
    return [function(item) for item in items]


# Rendering

def discover_models(root) -> list[tuple[str, Path]]:
    """(category, path) for every ``<category>/<name>.off`` under ``root``."""
    return [(path.parent.name, path) for path in sorted(Path(root).rglob('*.off'))]


def run_render(
    models: list[tuple[str, Path]],
    out_dir,
    config: RenderConfig = RenderConfig(),
    seed: int = 0,
    jobs: int = 1,
) -> dict:
    """
    Render every model to depth PNGs ``<out>/<category>/<name>/view_XXX.png``
    and write ``render.json`` listing the views with their pose angles.
    """
    out_dir = Path(out_dir)
    entries = []
    for category, path in models:
        entries.append(render_model(category, path, out_dir, config, derive_seed(seed, 'render', path.name), jobs))
    document = {'version': FORMAT_VERSION, 'models': entries}
    write_json(out_dir / 'render.json', document)
    logger.info('Rendered %d models into %s', len(entries), out_dir)
    return document


def render_model(category: str, path, out_dir, config: RenderConfig, seed: int, jobs: int = 1) -> dict:
    path = Path(path)
    views = render_views(read_off(path), config, seed=seed, jobs=jobs)
    directory = Path(out_dir) / category / path.stem
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for index, view in enumerate(views):
        name = f'view_{index:03d}.png'
        write_depth_png(directory / name, view.depth)
        roll, pitch, yaw = view.pose
        records.append({
            'file': (Path(category) / path.stem / name).as_posix(),
            'roll': roll, 'pitch': pitch, 'yaw': yaw,
        })
    return {'model': path.stem, 'category': category, 'views': records}


# Detection

def discover_frames(inputs, camera=None) -> list[tuple[str, Path, Path]]:
    """
    (frame id, cloud path, camera path) for PLY files or directories of PLY
    files. The camera defaults to ``camera.txt`` beside each cloud.
    """
    frames = []
    for entry in map(Path, inputs):
        if entry.is_dir():
            clouds = sorted(entry.glob('*.ply'))
        elif entry.exists():
            clouds = [entry]
        else:
            raise DataError(f'input not found: {entry}')
        for cloud in clouds:
            frames.append((cloud.stem, cloud, Path(camera) if camera else cloud.parent / 'camera.txt'))
    return frames


def run_detect(
    frames: list[tuple[str, Path, Path]],
    out_dir,
    clustering: ClusteringParams = ClusteringParams(),
    plane_removal: PlaneRemovalParams = PlaneRemovalParams(),
    seed: int = 0,
    jobs: int = 1,
) -> list[dict]:
    """
    Detect proposals in every frame; writes ``masks/``, ``crops/`` and the
    ``proposals.jsonl`` manifest (one record per proposal). All inputs are read
    before anything is written, so a corrupt input leaves no manifest behind.
    """
    out_dir = Path(out_dir)
    loaded = [(frame_id, read_ply(cloud_path), read_camera(camera_path), cloud_path, camera_path)
              for frame_id, cloud_path, camera_path in frames]

    def detect(item):
        frame_id, cloud, camera = item[:3]
        return detect_objects(cloud, camera, clustering, plane_removal,
                              seed=derive_seed(seed, 'detect', frame_id), frame_id=frame_id)

    detections = _map(detect, loaded, jobs)
    records = []
    for (frame_id, cloud, camera, cloud_path, camera_path), proposals in zip(loaded, detections):
        for k, proposal in enumerate(proposals):
            stem = Path(frame_id) / f'{k:03d}'
            for sub in ('masks', 'crops'):
                (out_dir / sub / frame_id).mkdir(parents=True, exist_ok=True)
            rgb, depth = rasterize_proposal(proposal, cloud, camera)
            write_mask_png(out_dir / 'masks' / f'{stem}.png', proposal.mask)
            write_rgb_png(out_dir / 'crops' / f'{stem}_rgb.png', rgb)
            write_depth_png(out_dir / 'crops' / f'{stem}_depth.png', depth)
            records.append({
                'id': stem.as_posix(),
                'frame': frame_id,
                'source': os.path.relpath(cloud_path, out_dir),
                'camera': os.path.relpath(camera_path, out_dir),
                'mask': f'masks/{stem.as_posix()}.png',
                'rgb': f'crops/{stem.as_posix()}_rgb.png',
                'depth': f'crops/{stem.as_posix()}_depth.png',
                'bbox': list(proposal.bbox),
                'centroid': proposal.centroid.tolist(),
                'pixel_count': proposal.pixel_count,
                'point_indices': proposal.point_indices.tolist(),
            })
    write_jsonl(out_dir / 'proposals.jsonl', records)
    logger.info('Detected %d proposals in %d frames', len(records), len(frames))
    return records


# Features

def _crop_mask(record: dict, root: Path) -> np.ndarray:
    u_min, v_min, u_max, v_max = record['bbox']
    return read_mask_png(root / record['mask'])[v_min:v_max + 1, u_min:u_max + 1]


def run_features(proposals_path, out_dir=None, jobs: int = 1) -> tuple[list[str], np.ndarray, np.ndarray]:
    """
    RGB and depth descriptors for every proposal of a ``proposals.jsonl``;
    writes ``rgb_features.csv`` and ``depth_features.csv`` beside it (or into
    ``out_dir``).
    """
    proposals_path = Path(proposals_path)
    root = proposals_path.parent
    out_dir = Path(out_dir) if out_dir else root
    records = read_jsonl(proposals_path)

    def describe(record):
        mask = _crop_mask(record, root)
        rgb = extract_rgb_features(read_rgb_png(root / record['rgb']), mask)
        depth = extract_depth_features(read_depth_png(root / record['depth']), mask)
        return rgb.values, depth.values

    described = _map(describe, records, jobs)
    ids = [record['id'] for record in records]
    rgb = np.array([d[0] for d in described]).reshape(len(ids), -1)
    depth = np.array([d[1] for d in described]).reshape(len(ids), -1)
    write_feature_matrix(out_dir / 'rgb_features.csv', ids, rgb)
    write_feature_matrix(out_dir / 'depth_features.csv', ids, depth)
    logger.info('Extracted features for %d proposals', len(ids))
    return ids, rgb, depth


def run_view_features(render_manifest, out_path) -> tuple[list[str], np.ndarray]:
    """Depth descriptors of every rendered view, ids ``<category>/<model>/view_XXX``."""
    render_manifest = Path(render_manifest)
    document = read_json(render_manifest)
    ids, rows = [], []
    for entry in document['models']:
        for view in entry['views']:
            depth = read_depth_png(render_manifest.parent / view['file'])
            ids.append(view['file'].removesuffix('.png'))
            rows.append(extract_depth_features(depth).values)
    matrix = np.array(rows).reshape(len(ids), -1)
    write_feature_matrix(out_path, ids, matrix)
    return ids, matrix


def load_fused(features_dir) -> tuple[list[str], np.ndarray, int]:
    """Fused [rgb | depth] matrix from the two feature CSVs of a directory."""
    features_dir = Path(features_dir)
    ids, rgb = load_feature_matrix(features_dir / 'rgb_features.csv')
    depth_ids, depth = load_feature_matrix(features_dir / 'depth_features.csv')
    if ids != depth_ids:
        raise DataError('rgb and depth feature files list different proposals')
    if not ids:
        return [], np.zeros((0, 0)), 0
    X, split = fuse_matrices(rgb, depth)
    return ids, X, split


# Seed labels

def nearest_category(record: dict, annotations: dict, max_distance: float = 0.05) -> str | None:
    """Category of the annotated object nearest to the proposal centroid."""
    objects = annotations['frames'].get(record['frame'], {}).get('objects', [])
    if not objects:
        return None
    centroid = np.asarray(record['centroid'])
    distances = [np.linalg.norm(centroid - np.asarray(o['centroid'])) for o in objects]
    best = int(np.argmin(distances))
    return objects[best]['category'] if distances[best] <= max_distance else None


def select_seed_labels(
    records: list[dict],
    annotations: dict,
    categories: list[str],
    per_category: int,
    seed: int = 0,
) -> list[tuple[str, int]]:
    """
    Stand-in for the human annotator: pick ``per_category`` proposals of each
    category (by nearest annotated centroid) with a seeded draw.
    """
    candidates: dict[str, list[str]] = {name: [] for name in categories}
    for record in sorted(records, key=lambda r: r['id']):
        category = nearest_category(record, annotations)
        if category in candidates:
            candidates[category].append(record['id'])
    rng = np.random.default_rng(derive_seed(seed, 'seed-labels'))
    chosen = []
    for label, name in enumerate(categories):
        pool = candidates[name]
        picks = rng.choice(len(pool), size=min(per_category, len(pool)), replace=False) if pool else []
        chosen += [(pool[i], label) for i in sorted(int(p) for p in picks)]
    return sorted(chosen)


def manual_examples(rows: list[tuple[str, int]], ids, X, split) -> list[LabeledExample]:
    return attach_features([(i, label, Provenance.MANUAL, 1.0) for i, label in rows], ids, X, split)


# GPC, propagation, classifier

def one_vs_rest(manual: list[LabeledExample], label: int, split: int) -> TrainingSet:
    X = np.vstack([e.vector.values for e in manual])
    y = np.array([1.0 if e.label == label else -1.0 for e in manual])
    return TrainingSet(X, y, split)


def run_train_gpc(
    manual: list[LabeledExample],
    categories: list[str],
    settings: GpcSettings = GpcSettings(),
    seed: int = 0,
    out_dir=None,
    jobs: int = 1,
) -> list[GpcModel]:
    """One binary classifier per category; saved as ``gpc_<category>.json``."""
    if not manual:
        raise DataError('no supervision')
    split = manual[0].vector.split

    def fit(item):
        label, name = item
        model = train_gpc(
            one_vs_rest(manual, label, split),
            KernelHyperparams(),
            restarts=settings.restarts,
            seed=derive_seed(seed, 'gpc', name),
            tol=settings.tol,
            max_sweeps=settings.max_sweeps,
            category=name,
            damping=settings.damping,
        )
        return model

    models = _map(fit, list(enumerate(categories)), jobs)
    if out_dir is not None:
        for model in models:
            save_model(model, Path(out_dir) / f'gpc_{model.category}.json')
    return models


def load_gpc_models(directory, categories: list[str]) -> list[GpcModel]:
    return [load_model(Path(directory) / f'gpc_{name}.json') for name in categories]


def run_propagate(
    models: list[GpcModel],
    ids: list[str],
    X: np.ndarray,
    manual_ids,
    config: PropagationConfig = PropagationConfig(),
    categories: list[str] | None = None,
    out_dir=None,
    jobs: int = 1,
) -> PropagationResult:
    """Propagate labels to every feature row that is not manually labelled."""
    manual_ids = set(manual_ids)
    pool = [i for i, identifier in enumerate(ids) if identifier not in manual_ids]
    result = propagate_labels(
        models, [ids[i] for i in pool], X[pool] if pool else np.zeros((0, X.shape[1])),
        config, jobs=jobs, categories=categories,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_labels_csv(out_dir / 'propagated_labels.csv', result.examples)
        write_json(out_dir / 'propagation_report.json', {
            'version': FORMAT_VERSION,
            'tau': config.tau,
            'conflict_policy': config.conflict_policy.value,
            'pool_size': len(pool),
            'propagated': len(result.examples),
            'categories': result.report,
        })
    return result


def run_train_classifier(
    manual: list[LabeledExample],
    propagated: list[LabeledExample],
    settings: TrainingSettings = TrainingSettings(),
    seed: int = 0,
    categories: list[str] = (),
    path=None,
) -> LinearSoftmaxModel:
    model = train_weighted_classifier(
        manual, propagated,
        eta=settings.eta,
        epochs=settings.epochs,
        learning_rate=settings.learning_rate,
        seed=derive_seed(seed, 'classifier'),
        batch_size=settings.batch_size,
        n_classes=len(categories) or None,
        categories=tuple(categories),
    )
    if path is not None:
        save_classifier(model, path)
    return model


def classify_meshes(
    view_ids: list[str],
    view_features: np.ndarray,
    train_models: set[str],
    categories: list[str],
    settings: TrainingSettings = TrainingSettings(),
    seed: int = 0,
) -> dict:
    """
    Depth-only classifier on the views of training meshes; every other mesh is
    classified by averaging the predictions of its views.
    """
    by_model: dict[str, list[int]] = {}
    for row, identifier in enumerate(view_ids):
        by_model.setdefault(identifier.rsplit('/', 1)[0], []).append(row)
    examples = [
        LabeledExample(view_ids[row], FeatureVector(view_features[row], Modality.DEPTH), categories.index(model.split('/')[0]))
        for model, rows in sorted(by_model.items()) if model in train_models
        for row in rows
    ]
    classifier = train_weighted_classifier(
        examples, [], eta=0.0, epochs=settings.epochs, learning_rate=settings.learning_rate,
        seed=derive_seed(seed, 'mesh-classifier'), n_classes=len(categories),
    )
    results = {}
    for model, rows in sorted(by_model.items()):
        if model in train_models:
            continue
        label, probabilities = aggregate_view_predictions(predict_proba(classifier, view_features[rows]).tolist())
        results[model] = {'predicted': categories[label], 'actual': model.split('/')[0],
                          'probabilities': probabilities}
    correct = sum(r['predicted'] == r['actual'] for r in results.values())
    return {'accuracy': correct / len(results) if results else 0.0, 'models': results}


# Evaluation

def predict_frames(
    classifier: LinearSoftmaxModel,
    records: list[dict],
    ids: list[str],
    X: np.ndarray,
) -> dict[str, list[tuple[str, dict]]]:
    """Predicted category per proposal, grouped by frame."""
    rows = {identifier: i for i, identifier in enumerate(ids)}
    labels = np.argmax(predict_proba(classifier, X), axis=1) if len(ids) else np.zeros(0, dtype=np.int64)
    grouped: dict[str, list[tuple[str, dict]]] = {}
    for record in records:
        category = classifier.categories[int(labels[rows[record['id']]])]
        grouped.setdefault(record['frame'], []).append((category, record))
    return grouped


def annotated_frames(annotations: dict, root, predictions, proposals_root, split: str = 'test') -> list[AnnotatedFrame]:
    root, proposals_root = Path(root), Path(proposals_root)
    frames = []
    for frame_id, entry in sorted(annotations['frames'].items()):
        if entry.get('split', split) != split:
            continue
        truth = [Instance(o['category'], read_mask_png(root / o['mask'])) for o in entry['objects']]
        predicted = [Instance(category, read_mask_png(proposals_root / record['mask']))
                     for category, record in predictions.get(frame_id, [])]
        frames.append(AnnotatedFrame(frame_id, truth, predicted))
    return frames


def write_semantic_outputs(predictions, categories: list[str], proposals_root, out_dir) -> list[Path]:
    """
    Per frame, a PLY with a per-point ``label`` property (-1 for background)
    and a PNG of the frame's colours with predicted masks tinted by category.
    """
    proposals_root, out_dir = Path(proposals_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for frame_id, items in sorted(predictions.items()):
        first = items[0][1]
        cloud = read_ply(proposals_root / first['source'])
        camera = read_camera(proposals_root / first['camera'])
        labels = np.full(len(cloud), -1, dtype=np.int32)
        for category, record in items:
            labels[record['point_indices']] = categories.index(category)
        write_ply(out_dir / f'{frame_id}.ply', cloud, labels=labels)

        uv, depth, valid = project_points(camera, cloud.points)
        columns, rows, inside = rasterize(uv, camera.width, camera.height)
        inside &= valid
        chosen = np.flatnonzero(inside)
        winners = chosen[nearest_per_pixel(rows[chosen] * camera.width + columns[chosen], depth[chosen])]
        image = np.zeros((camera.height, camera.width, 3), dtype=np.uint8)
        if cloud.colors is not None:
            image[rows[winners], columns[winners]] = cloud.colors[winners]
        for category, record in items:
            mask = read_mask_png(proposals_root / record['mask'])
            tint = PALETTE[categories.index(category) % len(PALETTE)]
            image[mask] = (image[mask].astype(np.uint16) + tint) // 2
        write_rgb_png(out_dir / f'{frame_id}.png', image)
        written += [out_dir / f'{frame_id}.ply', out_dir / f'{frame_id}.png']
    return written


def metrics_document(reports: dict[str, list[AnnotatedFrame]]) -> tuple[dict, str]:
    """JSON document and text table for named sets of evaluated frames."""
    document = {'version': FORMAT_VERSION}
    table_reports = {}
    for name, frames in reports.items():
        instance = instance_metrics(frames)
        pixel = pixel_metrics(frames) if frames else instance
        document[name] = {'frames': len(frames), 'instance': instance.as_dict(), 'pixel': pixel.as_dict()}
        suffix = '' if name == 'weakly_supervised' else f', {name.replace("_", " ")}'
        table_reports[f'inst.w.{suffix}'] = instance
        table_reports[f'pix.w.{suffix}'] = pixel
    return document, format_table(table_reports)


def run_evaluate(
    classifiers: dict[str, LinearSoftmaxModel],
    records: list[dict],
    proposals_root,
    ids: list[str],
    X: np.ndarray,
    annotations: dict,
    annotations_root,
    out_dir,
    semantic: bool = True,
) -> dict:
    """
    Evaluate each named classifier on the test proposals; writes
    ``metrics.json``, ``metrics.txt`` and, for the first classifier, the
    semantic clouds and overlays under ``semantic/``.
    """
    out_dir = Path(out_dir)
    categories = annotations['categories']
    evaluated = {}
    for index, (name, classifier) in enumerate(classifiers.items()):
        predictions = predict_frames(classifier, records, ids, X)
        evaluated[name] = annotated_frames(annotations, annotations_root, predictions, proposals_root)
        if semantic and index == 0:
            write_semantic_outputs(predictions, categories, proposals_root, out_dir / 'semantic')
    document, table = metrics_document(evaluated)
    write_json(out_dir / 'metrics.json', document)
    (out_dir / 'metrics.txt').write_text(table)
    return document


# Orchestration

class StageRunner:
    """Runs named stages, timing them and wrapping failures in :class:`StageError`."""

    def __init__(self, on_stage=None):
        self.timings: dict[str, float] = {}
        self.counts: dict[str, dict] = {}
        self.on_stage = on_stage

    @contextmanager
    def stage(self, name: str):
        counts: dict = {}
        started = time.perf_counter()
        logger.info('Stage %s started', name)
        try:
            yield counts
        except RecognitionError as exc:
            raise StageError(name, exc) from exc
        except (OSError, ValueError, KeyError) as exc:
            raise StageError(name, DataError(str(exc))) from exc
        elapsed = time.perf_counter() - started
        self.timings[name] = elapsed
        self.counts[name] = counts
        logger.info('Stage %s finished in %.2fs %s', name, elapsed, counts)
        if self.on_stage is not None:
            self.on_stage(name, elapsed, counts)


def run_pipeline(fixture_root, work_dir, config: PipelineConfig = PipelineConfig(), jobs: int = 1, on_stage=None) -> dict:
    """
    Full weakly supervised run over a fixture directory (see
    ``scenes.write_fixture``): render, detect, features, seed labels, GPC,
    propagation, classifiers, mesh classification and evaluation. Writes
    ``manifest.json`` (deterministic) and ``timings.json`` into ``work_dir``.
    """
    fixture_root, work_dir = Path(fixture_root), Path(work_dir)
    annotations = read_json(fixture_root / 'annotations.json')
    categories = annotations['categories']
    runner = StageRunner(on_stage)
    seed = config.seed
    outputs: list[Path] = []
    counts: dict = {}

    mesh_report = None
    if config.render_views:
        with runner.stage('render') as stage:
            models = [(m['category'], fixture_root / m['path'])
                      for split in ('train', 'test') for m in annotations['models'][split]]
            run_render(models, work_dir / 'render', config.render, seed, jobs)
            view_ids, view_matrix = run_view_features(work_dir / 'render' / 'render.json',
                                                      work_dir / 'render' / 'view_features.csv')
            stage['views'] = len(view_ids)
            outputs += [work_dir / 'render' / 'render.json', work_dir / 'render' / 'view_features.csv']

    for split in ('train', 'test'):
        with runner.stage(f'detect_{split}') as stage:
            frames = discover_frames([fixture_root / 'frames' / split])
            records = run_detect(frames, work_dir / split, config.clustering, config.plane_removal, seed, jobs)
            stage['proposals'] = len(records)
            counts[f'{split}_proposals'] = len(records)
            outputs.append(work_dir / split / 'proposals.jsonl')
        with runner.stage(f'features_{split}') as stage:
            ids, _, _ = run_features(work_dir / split / 'proposals.jsonl', jobs=jobs)
            stage['rows'] = len(ids)
            outputs += [work_dir / split / 'rgb_features.csv', work_dir / split / 'depth_features.csv']

    train_ids, train_X, split_index = load_fused(work_dir / 'train')
    with runner.stage('seed_labels') as stage:
        train_records = read_jsonl(work_dir / 'train' / 'proposals.jsonl')
        rows = select_seed_labels(train_records, annotations, categories, config.seeds_per_category, seed)
        manual = manual_examples(rows, train_ids, train_X, split_index)
        write_labels_csv(work_dir / 'manual_labels.csv', manual)
        write_json(work_dir / 'categories.json', {'version': FORMAT_VERSION, 'categories': categories})
        stage['manual'] = counts['manual_labels'] = len(manual)
        outputs += [work_dir / 'manual_labels.csv', work_dir / 'categories.json']

    with runner.stage('train_gpc') as stage:
        gpc_models = run_train_gpc(manual, categories, config.gpc, seed, work_dir / 'models', jobs)
        stage['models'] = len(gpc_models)
        outputs += [work_dir / 'models' / f'gpc_{name}.json' for name in categories]

    with runner.stage('propagate') as stage:
        result = run_propagate(gpc_models, train_ids, train_X, [e.id for e in manual],
                               config.propagation, categories, work_dir, jobs)
        stage['propagated'] = counts['propagated_labels'] = len(result.examples)
        outputs += [work_dir / 'propagated_labels.csv', work_dir / 'propagation_report.json']

    with runner.stage('train_classifier') as stage:
        weak = run_train_classifier(manual, result.examples, config.training, seed, categories,
                                    work_dir / 'classifier.json')
        baseline_settings = TrainingSettings(0.0, config.training.epochs, config.training.learning_rate,
                                             config.training.batch_size)
        baseline = run_train_classifier(manual, [], baseline_settings, seed, categories,
                                        work_dir / 'classifier_manual_only.json')
        stage['examples'] = len(manual) + len(result.examples)
        outputs += [work_dir / 'classifier.json', work_dir / 'classifier_manual_only.json']

    if config.render_views:
        with runner.stage('classify_meshes') as stage:
            train_models = {f"{m['category']}/{Path(m['path']).stem}" for m in annotations['models']['train']}
            mesh_report = classify_meshes(view_ids, view_matrix, train_models, categories, config.training, seed)
            write_json(work_dir / 'mesh_classification.json', {'version': FORMAT_VERSION, **mesh_report})
            stage['accuracy'] = counts['mesh_accuracy'] = mesh_report['accuracy']
            outputs.append(work_dir / 'mesh_classification.json')

    with runner.stage('evaluate') as stage:
        test_records = read_jsonl(work_dir / 'test' / 'proposals.jsonl')
        test_ids, test_X, _ = load_fused(work_dir / 'test')
        document = run_evaluate(
            {'weakly_supervised': weak, 'manual_only': baseline},
            test_records, work_dir / 'test', test_ids, test_X,
            annotations, fixture_root, work_dir,
        )
        overall = document['weakly_supervised']['instance']['overall']
        stage['f_score'] = counts['instance_f_score'] = overall['f_score']
        counts['manual_only_instance_f_score'] = document['manual_only']['instance']['overall']['f_score']
        outputs += [work_dir / 'metrics.json', work_dir / 'metrics.txt']
        outputs += sorted((work_dir / 'semantic').glob('*'))

    missing = [path for path in outputs if not path.exists()]
    if missing:
        raise StageError('manifest', DataError(f'missing outputs: {missing}'))
    manifest = {
        'version': FORMAT_VERSION,
        'config_hash': config.config_hash,
        'seed': seed,
        'inputs': {'fixture': fixture_root.name, 'categories': categories},
        'stages': list(runner.timings),
        'counts': counts,
        'outputs': sorted(path.relative_to(work_dir).as_posix() for path in outputs),
    }
    write_json(work_dir / 'manifest.json', manifest)
    write_json(work_dir / 'timings.json', {'version': FORMAT_VERSION, 'seconds': runner.timings})
    return manifest
