"""
Weak supervision: confidence-gated label propagation and the weighted
two-pool softmax classifier trained on manual and propagated labels.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .exceptions import ConfigurationError, DataError
from .features import FeatureVector, Modality
from .gpc import GpcModel, predict_many

logger = logging.getLogger(__name__)

CLASSIFIER_VERSION = 1


class Provenance(str, enum.Enum):
    MANUAL = 'manual'
    PROPAGATED = 'propagated'


class ConflictPolicy(str, enum.Enum):
    ABANDON = 'abandon'
    HIGHEST_CONFIDENCE = 'highest-confidence'


@dataclass(frozen=True, eq=False)
class LabeledExample:
    id: str
    vector: FeatureVector
    label: int
    provenance: Provenance = Provenance.MANUAL
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'provenance', Provenance(self.provenance))
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError('confidence must lie in [0, 1]')
        if self.label < 0:
            raise DataError('labels are non-negative category indices')


@dataclass(frozen=True)
class PropagationConfig:
    """
    Confidence gate for propagation.

    An item is labelled when some category model gives it probability >= ``tau``.
    Under ``abandon`` a model counts as claiming the item once its probability
    exceeds 0.5, not ``tau``: the conflict test then does not depend on
    ``tau``, so raising ``tau`` can only shrink the propagated set.
    """

    tau: float = 0.7
    conflict_policy: ConflictPolicy = ConflictPolicy.ABANDON

    def __post_init__(self):
        if not 0.5 < self.tau <= 1.0:
            raise ConfigurationError(f'tau must lie in (0.5, 1], got {self.tau}')
        object.__setattr__(self, 'conflict_policy', ConflictPolicy(self.conflict_policy))


@dataclass
class PropagationResult:
    examples: list[LabeledExample]
    report: dict[str, dict[str, int]]
    confidences: np.ndarray = field(repr=False)


def confidence_matrix(models: list[GpcModel], X: np.ndarray, jobs: int = 1) -> np.ndarray:
    """(n, C) predictive probabilities of every pool row under every category model."""
    if not models:
        raise DataError('at least one category model is required')
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) == 0:
        return np.zeros((0, len(models)))
    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        columns = list(executor.map(lambda model: predict_many(model, X)[0], models))
    return np.column_stack(columns)


def assign_labels(confidences: np.ndarray, config: PropagationConfig) -> tuple[np.ndarray, np.ndarray]:
    """
    Gate each row of a confidence matrix by τ (inclusive).

    Returns per-row labels (-1 when abandoned) and the confidence of the
    assigned category. Under the ``abandon`` policy a row that more than one
    model calls positive (probability above 0.5) is dropped whatever τ is, so
    raising τ can only remove labels.
    """
    confidences = np.asarray(confidences, dtype=np.float64)
    passing = confidences >= config.tau
    best = np.argmax(confidences, axis=1) if confidences.size else np.zeros(0, dtype=np.int64)
    labels = np.where(passing.any(axis=1), best, -1)
    if config.conflict_policy == ConflictPolicy.ABANDON:
        labels[(confidences > 0.5).sum(axis=1) > 1] = -1
    assigned = np.where(labels >= 0, confidences[np.arange(len(labels)), best] if len(labels) else 0.0, 0.0)
    return labels, assigned


def propagate_labels(
    models: list[GpcModel],
    ids: list[str],
    X: np.ndarray,
    config: PropagationConfig = PropagationConfig(),
    jobs: int = 1,
    categories: list[str] | None = None,
) -> PropagationResult:
    """
    Label the unlabeled pool with every category model and keep confident items.

    ``models[c]`` is the one-vs-rest classifier of category index c. The report
    counts, per category, the pool items whose most likely category is c, how
    many of them were propagated and how many were abandoned.

    Raises:
        DataError: "inconsistent dimension" when pool rows do not match the models.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(ids) != len(X) and not (len(ids) == 0 and X.size == 0):
        raise DataError('ids and feature rows differ in length')
    if len(ids) == 0:
        confidences = np.zeros((0, len(models)))
    else:
        confidences = confidence_matrix(models, X, jobs)
    labels, assigned = assign_labels(confidences, config)
    split = models[0].split
    examples = [
        LabeledExample(
            id=identifier,
            vector=FeatureVector(X[i], Modality.FUSED, split),
            label=int(labels[i]),
            provenance=Provenance.PROPAGATED,
            confidence=float(assigned[i]),
        )
        for i, identifier in enumerate(ids)
        if labels[i] >= 0
    ]

    names = categories or [model.category or str(c) for c, model in enumerate(models)]
    best = np.argmax(confidences, axis=1) if len(confidences) else np.zeros(0, dtype=np.int64)
    report = {}
    for c, name in enumerate(names):
        unlabeled = int(np.sum(best == c))
        propagated = int(np.sum(labels == c))
        report[name] = {
            'unlabeled_count': unlabeled,
            'propagated_count': propagated,
            'abandoned_count': int(np.sum((best == c) & (labels < 0))),
        }
    logger.info('Propagated %d of %d pool items at tau=%.3f', len(examples), len(ids), config.tau)
    return PropagationResult(examples, report, confidences)


@dataclass(frozen=True, eq=False)
class LinearSoftmaxModel:
    """C×(d+1) weights; the last column is the bias."""

    weights: np.ndarray
    loss: float = float('nan')
    history: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[1] < 1:
            raise DataError('weights must be a C x (d+1) matrix')
        if not np.all(np.isfinite(weights)):
            raise DataError('invalid value')
        object.__setattr__(self, 'weights', weights)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.weights.shape[1] - 1


def _augmented(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([X, np.ones((len(X), 1))])


def _loss_and_gradient(W, X_aug, y, sample_weights):
    log_p = log_softmax(X_aug @ W.T, axis=1)
    rows = np.arange(len(y))
    loss = -float(np.dot(sample_weights, log_p[rows, y]))
    residual = np.exp(log_p)
    residual[rows, y] -= 1.0
    gradient = (residual * sample_weights[:, None]).T @ X_aug
    return loss, gradient


def _stack(examples: list[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    if not examples:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    dimensions = {len(e.vector) for e in examples}
    if len(dimensions) != 1:
        raise DataError('inconsistent dimension')
    return np.vstack([e.vector.values for e in examples]), np.array([e.label for e in examples], dtype=np.int64)


def _pools(manual, propagated, eta):
    X_m, y_m = _stack(manual)
    X_p, y_p = _stack(propagated)
    if len(propagated) and X_p.shape[1] != X_m.shape[1]:
        raise DataError('inconsistent dimension')
    X = np.vstack([X_m, X_p]) if len(propagated) else X_m
    y = np.concatenate([y_m, y_p])
    w = np.concatenate([np.ones(len(manual)), np.full(len(propagated), float(eta))])
    return X, y, w


def weighted_softmax_loss(
    weights: np.ndarray,
    manual: list[LabeledExample],
    propagated: list[LabeledExample],
    eta: float,
) -> tuple[float, np.ndarray]:
    """
    -Σ_manual log p(y|x) - η Σ_propagated log p(y|x) and its gradient with
    respect to the C×(d+1) weight matrix.
    """
    X, y, w = _pools(manual, propagated, eta)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(y >= weights.shape[0]) or X.shape[1] + 1 != weights.shape[1]:
        raise DataError('inconsistent dimension')
    return _loss_and_gradient(weights, _augmented(X), y, w)


def train_weighted_classifier(
    manual: list[LabeledExample],
    propagated: list[LabeledExample],
    eta: float = 1.0,
    epochs: int = 200,
    learning_rate: float = 0.5,
    seed: int = 0,
    batch_size: int | None = None,
    n_classes: int | None = None,
    categories: tuple[str, ...] = (),
) -> LinearSoftmaxModel:
    """
    Fit a linear softmax classifier on the manual and η-weighted propagated pools.

    Without ``batch_size`` every epoch is one full-batch gradient step with
    backtracking, so the loss never increases; with ``batch_size`` the pool is
    shuffled per epoch by ``seed`` and visited in mini-batches. Propagated
    examples are ordered by id first, so their input order does not matter;
    at η = 0 they are left out entirely.

    Raises:
        DataError: "no supervision" when the manual pool is empty.
    """
    if not manual:
        raise DataError('no supervision')
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f'eta must lie in [0, 1], got {eta}')
    propagated = sorted(propagated, key=lambda e: e.id) if eta > 0 else []
    X, y, w = _pools(manual, propagated, eta)
    X_aug = _augmented(X)
    C = max(int(y.max()) + 1, n_classes or 0)
    W = np.zeros((C, X_aug.shape[1]))
    total = float(w.sum())
    rng = np.random.default_rng(seed)

    loss, gradient = _loss_and_gradient(W, X_aug, y, w)
    history = [loss]
    for _ in range(epochs):
        if batch_size is None or batch_size >= len(y):
            step = learning_rate
            while step > 1e-12:
                candidate = W - step * gradient / total
                candidate_loss, candidate_gradient = _loss_and_gradient(candidate, X_aug, y, w)
                if candidate_loss <= loss:
                    W, loss, gradient = candidate, candidate_loss, candidate_gradient
                    break
                step /= 2.0
            else:
                break
        else:
            order = rng.permutation(len(y))
            for start in range(0, len(y), batch_size):
                batch = order[start:start + batch_size]
                batch_weight = float(w[batch].sum())
                if batch_weight <= 0:
                    continue
                _, batch_gradient = _loss_and_gradient(W, X_aug[batch], y[batch], w[batch])
                W = W - learning_rate * batch_gradient / batch_weight
            loss, gradient = _loss_and_gradient(W, X_aug, y, w)
        history.append(loss)

    logger.info('Classifier: %d manual + %d propagated (eta=%.2f), loss %.6f',
                len(manual), len(propagated), eta, loss)
    return LinearSoftmaxModel(W, loss, tuple(history), tuple(categories))


def predict_proba(model: LinearSoftmaxModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dimension:
        raise DataError('inconsistent dimension')
    return softmax(_augmented(X) @ model.weights.T, axis=1)


def predict_class(model: LinearSoftmaxModel, x: FeatureVector) -> tuple[int, list[float]]:
    """Softmax probabilities and the argmax category (lowest index on ties)."""
    probabilities = predict_proba(model, x.values[None])[0]
    return int(np.argmax(probabilities)), probabilities.tolist()


def aggregate_view_predictions(per_view) -> tuple[int, list[float]]:
    """
    Average per-view probability lists and take the argmax.

    Raises:
        DataError: for no views or views of unequal length.
    """
    if len(per_view) == 0:
        raise DataError('no view predictions to aggregate')
    if len({len(view) for view in per_view}) != 1:
        raise DataError('inconsistent dimension')
    mean = np.mean(np.asarray(per_view, dtype=np.float64), axis=0)
    return int(np.argmax(mean)), mean.tolist()


def save_classifier(model: LinearSoftmaxModel, path) -> None:
    document = {
        'version': CLASSIFIER_VERSION,
        'categories': list(model.categories),
        'weights': model.weights.tolist(),
        'loss': model.loss,
        'history': list(model.history),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True) + '\n')


def load_classifier(path) -> LinearSoftmaxModel:
    try:
        document = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f'cannot read classifier {path}: {exc}') from exc
    if document.get('version') != CLASSIFIER_VERSION:
        raise DataError(f"unsupported classifier version {document.get('version')!r}")
    return LinearSoftmaxModel(
        np.array(document['weights'], dtype=np.float64),
        float(document['loss']),
        tuple(document['history']),
        tuple(document['categories']),
    )


def write_labels_csv(path, examples: list[LabeledExample]) -> None:
    """``id,label,provenance,confidence`` rows in the given order."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['id', 'label', 'provenance', 'confidence'])
        for example in examples:
            writer.writerow([example.id, example.label, example.provenance.value, repr(example.confidence)])


def read_labels_csv(path) -> list[tuple[str, int, Provenance, float]]:
    try:
        with open(path, newline='') as handle:
            rows = list(csv.DictReader(handle))
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc
    try:
        return [
            (row['id'], int(row['label']), Provenance(row['provenance']), float(row['confidence']))
            for row in rows
        ]
    except (KeyError, ValueError) as exc:
        raise DataError(f'malformed labels file {path}: {exc}') from exc


def attach_features(
    rows: list[tuple[str, int, Provenance, float]],
    ids: list[str],
    X: np.ndarray,
    split: int,
) -> list[LabeledExample]:
    """Join label rows with feature rows by id."""
    index = {identifier: i for i, identifier in enumerate(ids)}
    missing = [row[0] for row in rows if row[0] not in index]
    if missing:
        raise DataError(f'labels without features: {missing[:5]}')
    return [
        LabeledExample(
            id=identifier,
            vector=FeatureVector(X[index[identifier]], Modality.FUSED, split),
            label=label,
            provenance=provenance,
            confidence=confidence,
        )
        for identifier, label, provenance, confidence in rows
    ]
