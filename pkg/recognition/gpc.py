"""
Binary Gaussian process classification with Expectation Propagation.

The latent function has a zero-mean GP prior with a product kernel

    k(x, x') = k_I(x_I, x'_I) · k_D(x_D, x'_D),
    k_RBF(a, b) = α² exp(-‖a - b‖² / (2β²)),

over the RGB block x_I and the depth block x_D of a fused feature vector.
The probit likelihood Φ(y·f) is approximated by EP site Gaussians; the EP log
marginal likelihood is maximized over the four kernel hyperparameters in log
space, and predictive probabilities are Φ(μ*/√(1 + σ*²)).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.special import log_ndtr, ndtr

from .exceptions import DataError, NumericalError
from .features import FeatureVector, Modality

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
JITTER_START = 1e-8
JITTER_LIMIT = 1e-2
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelHyperparams:
    """Signal scale α and length scale β for the RGB (I) and depth (D) kernels."""

    alpha_i: float = 1.0
    beta_i: float = 1.0
    alpha_d: float = 1.0
    beta_d: float = 1.0

    def __post_init__(self):
        for name in ('alpha_i', 'beta_i', 'alpha_d', 'beta_d'):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise DataError(f'{name} must be positive')
            object.__setattr__(self, name, value)

    def log_vector(self) -> np.ndarray:
        return np.log([self.alpha_i, self.beta_i, self.alpha_d, self.beta_d])

    @classmethod
    def from_log_vector(cls, theta) -> KernelHyperparams:
        return cls(*np.exp(np.asarray(theta, dtype=np.float64)).tolist())

    def as_dict(self) -> dict:
        return {
            'alpha_i': self.alpha_i, 'beta_i': self.beta_i,
            'alpha_d': self.alpha_d, 'beta_d': self.beta_d,
        }


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Fused feature rows X (n, d) with split index and labels y in {-1, +1}."""

    X: np.ndarray
    y: np.ndarray
    split: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or len(X) != len(y) or len(y) < 1:
            raise DataError('training set needs matching, non-empty X and y')
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise DataError('labels must be -1 or +1')
        if not 0 <= self.split <= X.shape[1]:
            raise DataError('split index outside the feature vector')
        if not np.all(np.isfinite(X)):
            raise DataError('invalid value')
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'split', int(self.split))

    @classmethod
    def from_vectors(cls, vectors: list[FeatureVector], labels) -> TrainingSet:
        splits = {v.split for v in vectors}
        if len(splits) != 1 or any(v.modality != Modality.FUSED for v in vectors):
            raise DataError('training vectors must be fused with one split index')
        return cls(np.vstack([v.values for v in vectors]), np.asarray(labels), splits.pop())

    def __len__(self) -> int:
        return len(self.y)

    def require_both_labels(self) -> None:
        if not (np.any(self.y > 0) and np.any(self.y < 0)):
            raise DataError('degenerate labels')


@dataclass(frozen=True, eq=False)
class GpcModel:
    """
    A trained binary classifier: hyperparameters, training data, EP sites
    (ν̃, τ̃) and the cached lower Cholesky factor of B = I + S̃½ K S̃½.
    """

    hyperparams: KernelHyperparams
    training: TrainingSet
    site_means: np.ndarray
    site_precisions: np.ndarray
    jitter: float
    chol: np.ndarray
    weights: np.ndarray
    log_marginal_likelihood: float
    converged: bool = True
    sweeps: int = 0
    category: str = ''

    @property
    def split(self) -> int:
        return self.training.split

    @property
    def dimension(self) -> int:
        return self.training.X.shape[1]


@dataclass(frozen=True)
class Prediction:
    probability: float
    latent_mean: float
    latent_variance: float


def _squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.shape[1] == 0:
        return np.zeros((len(A), len(B)))
    return cdist(A, B, 'sqeuclidean')


def _kernel_parts(h: KernelHyperparams, A: np.ndarray, B: np.ndarray, split: int):
    distance_i = _squared_distances(A[:, :split], B[:, :split])
    distance_d = _squared_distances(A[:, split:], B[:, split:])
    scale = h.alpha_i ** 2 * h.alpha_d ** 2
    K = scale * np.exp(-distance_i / (2 * h.beta_i ** 2) - distance_d / (2 * h.beta_d ** 2))
    return K, distance_i, distance_d


def kernel_matrix(h: KernelHyperparams, A: np.ndarray, B: np.ndarray, split: int) -> np.ndarray:
    """Product-RBF Gram matrix between the rows of A and B."""
    return _kernel_parts(h, np.atleast_2d(A), np.atleast_2d(B), split)[0]


def kernel_eval(h: KernelHyperparams, x: FeatureVector, x2: FeatureVector) -> float:
    """
    k_I(x_I, x'_I) · k_D(x_D, x'_D) for two fused vectors.

    Raises:
        DataError: when the vectors do not share length and split index.
    """
    if x.split is None or x.split != x2.split or len(x) != len(x2):
        raise DataError('split mismatch')
    return float(kernel_matrix(h, x.values[None], x2.values[None], x.split)[0, 0])


def _jittered(K: np.ndarray) -> tuple[np.ndarray, float]:
    """K plus the smallest doubling jitter that makes it Cholesky-factorable."""
    n = len(K)
    base = float(np.mean(np.diag(K)))
    jitter = JITTER_START * base
    while jitter <= JITTER_LIMIT * base:
        candidate = K + jitter * np.eye(n)
        try:
            np.linalg.cholesky(candidate)
            return candidate, jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise NumericalError('ill-conditioned kernel')


def _probit_moments(y: float, mean: float, variance: float) -> tuple[float, float]:
    """Mean and variance of N(f | mean, variance)·Φ(y f), normalized."""
    denominator = math.sqrt(1.0 + variance)
    z = y * mean / denominator
    ratio = math.exp(-0.5 * z * z - LOG_SQRT_2PI - float(log_ndtr(z)))
    hat_mean = mean + y * variance * ratio / denominator
    hat_variance = variance - variance ** 2 * ratio * (z + ratio) / (1.0 + variance)
    return hat_mean, hat_variance


def _posterior(K: np.ndarray, tau: np.ndarray, nu: np.ndarray):
    """Cholesky factor L of B, posterior covariance Σ and mean μ for given sites."""
    root = np.sqrt(tau)
    B = np.eye(len(K)) + np.outer(root, root) * K
    try:
        L = cholesky(B, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError('ill-conditioned kernel') from exc
    V = solve_triangular(L, root[:, None] * K, lower=True)
    Sigma = K - V.T @ V
    return L, Sigma, Sigma @ nu


def _predictive_weights(K: np.ndarray, L: np.ndarray, tau: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """b = ν̃ - S̃½ B⁻¹ S̃½ K ν̃, so that the latent mean at x* is k*ᵀ b."""
    root = np.sqrt(tau)
    return nu - root * cho_solve((L, True), root * (K @ nu))


def _log_marginal_likelihood(y, L, Sigma, mu, tau, nu) -> float:
    diagonal = np.diag(Sigma)
    tau_cavity = 1.0 / diagonal - tau
    nu_cavity = mu / diagonal - nu
    log_z = log_ndtr(y * (nu_cavity / tau_cavity) / np.sqrt(1.0 + 1.0 / tau_cavity))
    negative = (
        np.sum(np.log(np.diag(L)))
        - np.sum(log_z)
        - nu @ Sigma @ nu / 2.0
        - nu_cavity @ ((tau / tau_cavity * nu_cavity - 2.0 * nu) / (tau + tau_cavity)) / 2.0
        + np.sum(nu ** 2 / (tau_cavity + tau)) / 2.0
        - np.sum(np.log1p(tau / tau_cavity)) / 2.0
    )
    return float(-negative)


def _finish(h, ts, K, jitter, tau, nu, converged, sweeps, category='') -> GpcModel:
    L, Sigma, mu = _posterior(K, tau, nu)
    return GpcModel(
        hyperparams=h,
        training=ts,
        site_means=nu,
        site_precisions=tau,
        jitter=jitter,
        chol=L,
        weights=_predictive_weights(K, L, tau, nu),
        log_marginal_likelihood=_log_marginal_likelihood(ts.y, L, Sigma, mu, tau, nu),
        converged=converged,
        sweeps=sweeps,
        category=category,
    )


def ep_posterior(
    ts: TrainingSet,
    h: KernelHyperparams,
    tol: float = 1e-6,
    max_sweeps: int = 100,
    damping: float = 0.8,
    category: str = '',
) -> GpcModel:
    """
    Fit EP site parameters for the probit likelihood.

    Sites are updated sequentially in index order, each new site mixed with
    the old one by ``damping``; Σ is refreshed from a fresh Cholesky factor
    after every sweep. Stops once the largest site change falls below ``tol``;
    reaching ``max_sweeps`` first is logged as a warning and recorded on the
    model.

    Raises:
        DataError: "degenerate labels" when only one class is present.
        NumericalError: "ill-conditioned kernel" when K cannot be stabilized.
    """
    ts.require_both_labels()
    K, jitter = _jittered(kernel_matrix(h, ts.X, ts.X, ts.split))
    n = len(ts)
    y = ts.y
    tau = np.zeros(n)
    nu = np.zeros(n)
    Sigma = K.copy()
    mu = np.zeros(n)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        tau_previous, nu_previous = tau.copy(), nu.copy()
        for i in range(n):
            tau_cavity = 1.0 / Sigma[i, i] - tau[i]
            if tau_cavity <= 0:
                continue
            nu_cavity = mu[i] / Sigma[i, i] - nu[i]
            hat_mean, hat_variance = _probit_moments(y[i], nu_cavity / tau_cavity, 1.0 / tau_cavity)
            tau_new = max(1.0 / hat_variance - tau_cavity, 0.0)
            nu_new = hat_mean / hat_variance - nu_cavity
            tau_new = damping * tau_new + (1.0 - damping) * tau[i]
            nu_new = damping * nu_new + (1.0 - damping) * nu[i]
            delta = tau_new - tau[i]
            tau[i], nu[i] = tau_new, nu_new
            column = Sigma[:, i].copy()
            Sigma -= (delta / (1.0 + delta * column[i])) * np.outer(column, column)
            mu = Sigma @ nu
        _, Sigma, mu = _posterior(K, tau, nu)
        change = max(np.max(np.abs(tau - tau_previous)), np.max(np.abs(nu - nu_previous)))
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning('EP did not converge in %d sweeps (n=%d, %s)', max_sweeps, n, h)
    return _finish(h, ts, K, jitter, tau, nu, converged, sweeps, category)


def log_ml_gradient_at(model: GpcModel) -> np.ndarray:
    """
    ∂ log Z_EP / ∂(log α_I, log β_I, log α_D, log β_D) at the model's sites:
    ½ tr(F ∂K/∂θ) with F = bbᵀ - S̃½ B⁻¹ S̃½.
    """
    h = model.hyperparams
    ts = model.training
    K_raw, distance_i, distance_d = _kernel_parts(h, ts.X, ts.X, ts.split)
    K = K_raw + model.jitter * np.eye(len(K_raw))
    root = np.sqrt(model.site_precisions)
    F = np.outer(model.weights, model.weights) - np.outer(root, root) * cho_solve(
        (model.chol, True), np.eye(len(K))
    )
    # The jitter scales with mean(diag K) = α_I²α_D², so it follows the α derivatives.
    derivatives = (
        2.0 * K,
        K_raw * distance_i / h.beta_i ** 2,
        2.0 * K,
        K_raw * distance_d / h.beta_d ** 2,
    )
    return np.array([0.5 * np.sum(F * dK) for dK in derivatives])


def log_ml_gradient(
    ts: TrainingSet,
    h: KernelHyperparams,
    tol: float = 1e-6,
    max_sweeps: int = 100,
) -> np.ndarray:
    """Log-space gradient of the EP log marginal likelihood at ``h``."""
    return log_ml_gradient_at(ep_posterior(ts, h, tol, max_sweeps))


def optimize_hyperparams(
    ts: TrainingSet,
    init: KernelHyperparams = KernelHyperparams(),
    restarts: int = 5,
    seed: int = 0,
    tol: float = 1e-6,
    max_sweeps: int = 100,
    max_iterations: int = 200,
    bounds: tuple[float, float] = (1e-3, 1e3),
    damping: float = 0.8,
) -> tuple[KernelHyperparams, float]:
    """
    Maximize the EP log marginal likelihood over log hyperparameters.

    The first start is ``init``; the remaining ``restarts - 1`` starts are
    drawn log-uniformly from [1e-2, 1e2] with ``seed``. Each start runs
    L-BFGS-B (line-searched quasi-Newton ascent) on -log Z_EP within
    ``bounds``; the best point evaluated over all starts is returned.

    Raises:
        NumericalError: "optimization failed" when EP fails at every start.
    """
    ts.require_both_labels()
    rng = np.random.default_rng(seed)
    starts = [init.log_vector()]
    starts += [rng.uniform(math.log(1e-2), math.log(1e2), size=4) for _ in range(max(restarts, 1) - 1)]
    log_bounds = [(math.log(bounds[0]), math.log(bounds[1]))] * 4
    best = {'theta': None, 'value': -math.inf}

    def objective(theta):
        try:
            model = ep_posterior(ts, KernelHyperparams.from_log_vector(theta), tol, max_sweeps, damping)
        except NumericalError:
            return math.inf, np.zeros(4)
        value = model.log_marginal_likelihood
        if value > best['value']:
            best['theta'], best['value'] = np.array(theta, dtype=np.float64), value
        return -value, -log_ml_gradient_at(model)

    for index, start in enumerate(starts):
        start = np.clip(start, *log_bounds[0])
        if not math.isfinite(objective(start)[0]):
            logger.info('Restart %d: EP failed at the starting point', index)
            continue
        result = minimize(
            objective, start, jac=True, method='L-BFGS-B', bounds=log_bounds,
            options={'maxiter': max_iterations, 'gtol': 1e-7, 'ftol': 1e-12},
        )
        logger.debug('Restart %d: log ML %.6f (%s)', index, -result.fun, result.message)

    if best['theta'] is None:
        raise NumericalError('optimization failed')
    return KernelHyperparams.from_log_vector(best['theta']), best['value']


def train_gpc(
    ts: TrainingSet,
    init: KernelHyperparams = KernelHyperparams(),
    restarts: int = 5,
    seed: int = 0,
    tol: float = 1e-6,
    max_sweeps: int = 100,
    category: str = '',
    damping: float = 0.8,
) -> GpcModel:
    """Optimize hyperparameters, then fit the final EP posterior."""
    h, log_ml = optimize_hyperparams(ts, init, restarts, seed, tol, max_sweeps, damping=damping)
    logger.info('GPC %s: n=%d, log ML %.4f, %s', category or '-', len(ts), log_ml, h)
    return ep_posterior(ts, h, tol, max_sweeps, damping, category=category)


def predict_many(model: GpcModel, X_star: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized predictive probabilities, latent means and latent variances
    for the rows of ``X_star``.

    Raises:
        DataError: on a feature dimension mismatch.
    """
    X_star = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
    if X_star.shape[1] != model.dimension:
        raise DataError('inconsistent dimension')
    h = model.hyperparams
    K_star = kernel_matrix(h, model.training.X, X_star, model.split)
    mean = K_star.T @ model.weights
    root = np.sqrt(model.site_precisions)
    V = solve_triangular(model.chol, root[:, None] * K_star, lower=True)
    prior = h.alpha_i ** 2 * h.alpha_d ** 2
    variance = np.maximum(prior - np.sum(V * V, axis=0), 0.0)
    probability = ndtr(mean / np.sqrt(1.0 + variance))
    return probability, mean, variance


def predict(model: GpcModel, x_star: FeatureVector) -> Prediction:
    """Predictive class-(+1) probability Φ(μ*/√(1 + σ*²)) for one fused vector."""
    if x_star.split is not None and x_star.split != model.split:
        raise DataError('split mismatch')
    probability, mean, variance = predict_many(model, x_star.values[None])
    return Prediction(float(probability[0]), float(mean[0]), float(variance[0]))


def save_model(model: GpcModel, path) -> None:
    """Versioned JSON; floats are written with exact round-trip text."""
    document = {
        'version': MODEL_VERSION,
        'category': model.category,
        'hyperparams': model.hyperparams.as_dict(),
        'split': model.split,
        'X': model.training.X.tolist(),
        'y': model.training.y.tolist(),
        'site_means': model.site_means.tolist(),
        'site_precisions': model.site_precisions.tolist(),
        'jitter': model.jitter,
        'log_marginal_likelihood': model.log_marginal_likelihood,
        'converged': model.converged,
        'sweeps': model.sweeps,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True) + '\n')


def load_model(path) -> GpcModel:
    """Rebuild a model from :func:`save_model` output without re-running EP."""
    try:
        document = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f'cannot read model {path}: {exc}') from exc
    if document.get('version') != MODEL_VERSION:
        raise DataError(f"unsupported model version {document.get('version')!r}")
    h = KernelHyperparams(**document['hyperparams'])
    ts = TrainingSet(np.array(document['X'], dtype=np.float64), np.array(document['y']), document['split'])
    jitter = float(document['jitter'])
    K = kernel_matrix(h, ts.X, ts.X, ts.split) + jitter * np.eye(len(ts))
    tau = np.array(document['site_precisions'], dtype=np.float64)
    nu = np.array(document['site_means'], dtype=np.float64)
    L, _, _ = _posterior(K, tau, nu)
    return GpcModel(
        hyperparams=h,
        training=ts,
        site_means=nu,
        site_precisions=tau,
        jitter=jitter,
        chol=L,
        weights=_predictive_weights(K, L, tau, nu),
        log_marginal_likelihood=float(document['log_marginal_likelihood']),
        converged=bool(document['converged']),
        sweeps=int(document['sweeps']),
        category=document.get('category', ''),
    )
