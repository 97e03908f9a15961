import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from dataset import Dataset, SplitSpec, project, stratified_split
from metrics import accuracy, confusion

EVALUATOR_KINDS = ("svm", "centroid")


class ClassifierError(ValueError):
    """Raised when a classifier cannot be trained or applied"""


@dataclass(frozen=True)
class SvmHyperparams:
    regularization_strength: float = 1e-4
    epochs: int = 30
    learning_rate_scale: float = 1.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.regularization_strength > 0:
            raise ClassifierError(
                f"regularization_strength must be positive, got {self.regularization_strength}"
            )
        if self.epochs < 1:
            raise ClassifierError(f"epochs must be at least 1, got {self.epochs}")
        if not self.learning_rate_scale > 0:
            raise ClassifierError(
                f"learning_rate_scale must be positive, got {self.learning_rate_scale}"
            )
        if self.batch_size < 1:
            raise ClassifierError(f"batch_size must be at least 1, got {self.batch_size}")


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(weights)) or not np.isfinite(self.bias):
            raise ClassifierError("Linear model has non-finite parameters")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != len(self.weights):
            raise ClassifierError(
                f"Sample has {features.shape[-1]} features, model expects {len(self.weights)}"
            )
        return features @ self.weights + self.bias

    def predict_many(self, features: np.ndarray) -> np.ndarray:
        # Ties (score exactly 0) go to the positive class.
        return (self.decision_function(features) >= 0).astype(np.int64)


@dataclass(frozen=True)
class FitnessProtocol:
    split: SplitSpec = field(default_factory=SplitSpec)
    evaluator_kind: str = "svm"
    svm_params: SvmHyperparams = field(default_factory=SvmHyperparams)

    def __post_init__(self):
        if self.evaluator_kind not in EVALUATOR_KINDS:
            raise ClassifierError(
                f"evaluator_kind must be one of {EVALUATOR_KINDS}, got {self.evaluator_kind!r}"
            )


def _check_trainable(train: Dataset):
    if train.positives == 0 or train.negatives == 0:
        raise ClassifierError("Training data must contain both classes")
    if not np.all(np.isfinite(train.features)):
        raise ClassifierError("Training data contains non-finite feature values")


def predict(model: LinearModel, sample: Sequence[float]) -> int:
    """1 if dot(weights, sample) + bias >= 0 else 0"""
    sample = np.asarray(sample, dtype=np.float64).reshape(-1)
    return int(model.decision_function(sample) >= 0)


def hinge_objective(model: LinearModel, data: Dataset, regularization_strength: float) -> float:
    """lambda/2 * (|w|^2 + b^2) + mean hinge loss, with labels mapped to -1/+1"""
    signs = 2.0 * data.labels - 1.0
    margins = signs * model.decision_function(data.features)
    penalty = 0.5 * regularization_strength * (model.weights @ model.weights + model.bias ** 2)
    return float(penalty + np.maximum(0.0, 1.0 - margins).mean())


def train_linear_svm(train: Dataset, params: SvmHyperparams) -> LinearModel:
    """Linear SVM by mini-batch stochastic subgradient descent on the hinge loss.

    Step t uses eta_t = learning_rate_scale / (regularization_strength * t).
    The bias is an extra, regularized weight on a constant 1 column. After
    each step the iterate is projected onto the ball of radius
    1/sqrt(regularization_strength). The returned model is the epoch-end
    iterate with the lowest objective, starting from the zero model.
    """
    _check_trainable(train)
    lam = params.regularization_strength
    rng = np.random.default_rng(params.seed)

    x = np.hstack([train.features, np.ones((train.n_samples, 1))])
    y = 2.0 * train.labels - 1.0
    w = np.zeros(x.shape[1])
    radius = 1.0 / np.sqrt(lam)

    best_w = w.copy()
    best_objective = hinge_objective(LinearModel(w[:-1], w[-1]), train, lam)
    t = 0
    for _ in range(params.epochs):
        order = rng.permutation(train.n_samples)
        for start in range(0, train.n_samples, params.batch_size):
            batch = order[start:start + params.batch_size]
            t += 1
            eta = params.learning_rate_scale / (lam * t)
            xb, yb = x[batch], y[batch]
            violators = yb * (xb @ w) < 1.0
            w *= max(0.0, 1.0 - eta * lam)
            if violators.any():
                w += (eta / len(batch)) * (yb[violators] @ xb[violators])
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm

        candidate = LinearModel(w[:-1], w[-1])
        objective = hinge_objective(candidate, train, lam)
        if objective < best_objective:
            best_objective = objective
            best_w = w.copy()

    return LinearModel(best_w[:-1], best_w[-1])


def train_centroid(train: Dataset) -> LinearModel:
    """Nearest-centroid classifier written as a linear rule.

    weights = mu1 - mu0 and bias = (|mu0|^2 - |mu1|^2) / 2, so a positive
    score means the sample is at least as close to the malware centroid.
    """
    _check_trainable(train)
    mu1 = train.features[train.labels == 1].mean(axis=0)
    mu0 = train.features[train.labels == 0].mean(axis=0)
    return LinearModel(weights=mu1 - mu0, bias=(mu0 @ mu0 - mu1 @ mu1) / 2.0)


def train_model(train: Dataset, protocol: FitnessProtocol) -> LinearModel:
    if protocol.evaluator_kind == "centroid":
        return train_centroid(train)
    return train_linear_svm(train, protocol.svm_params)


def _score_split(mask: np.ndarray, train: Dataset, validation: Dataset, protocol: FitnessProtocol) -> float:
    model = train_model(project(train, mask), protocol)
    projected = project(validation, mask)
    return accuracy(confusion(model.predict_many(projected.features), projected.labels))


def evaluate_subset(mask: Iterable[bool], d: Dataset, protocol: FitnessProtocol) -> float:
    """Validation accuracy of the protocol's classifier trained on the masked features"""
    mask = np.asarray(mask, dtype=bool)
    train, validation = stratified_split(d, protocol.split)
    return _score_split(mask, train, validation, protocol)


class FitnessEvaluator:
    """evaluate_subset bound to one dataset, with a per-run cache keyed by mask bits.

    The split is computed once; since stratified_split is deterministic the
    scores equal evaluate_subset for the same inputs. The cache is safe under
    concurrent insert-or-get.
    """

    def __init__(self, dataset: Dataset, protocol: FitnessProtocol, workers: int = 1):
        self.dataset = dataset
        self.protocol = protocol
        self.workers = max(1, workers)
        self.train, self.validation = stratified_split(dataset, protocol.split)
        self._cache: Dict[Tuple[int, bytes], float] = {}
        self._lock = threading.Lock()
        self.logger = logging.getLogger('FitnessEvaluator')

    @staticmethod
    def _key(mask: np.ndarray) -> Tuple[int, bytes]:
        return len(mask), np.packbits(mask).tobytes()

    def _lookup(self, mask: np.ndarray) -> Optional[float]:
        with self._lock:
            return self._cache.get(self._key(mask))

    def _score(self, mask: np.ndarray) -> float:
        cached = self._lookup(mask)
        if cached is not None:
            return cached
        fitness = _score_split(mask, self.train, self.validation, self.protocol)
        with self._lock:
            return self._cache.setdefault(self._key(mask), fitness)

    def __call__(self, mask: Iterable[bool]) -> float:
        mask = np.asarray(mask, dtype=bool)
        return self._score(mask)

    def prefetch(self, masks: Sequence[np.ndarray]):
        """Score masks ahead of use; results land in the cache only"""
        pending = []
        seen = set()
        for mask in masks:
            mask = np.asarray(mask, dtype=bool)
            key = self._key(mask)
            if key not in seen and self._lookup(mask) is None:
                seen.add(key)
                pending.append(mask)
        self.logger.debug(
            f"Prefetch: {len(pending)} new of {len(masks)} masks, {self.unique_evaluations} cached"
        )
        if self.workers == 1 or len(pending) < 2:
            for mask in pending:
                self._score(mask)
            return
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            list(executor.map(self._score, pending))

    @property
    def unique_evaluations(self) -> int:
        with self._lock:
            return len(self._cache)

    def split_row_ids(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.train.row_ids, self.validation.row_ids
