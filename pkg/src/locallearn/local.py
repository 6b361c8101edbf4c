"""Local learning: per test sample, train a one-versus-all SVM on its k
cosine-nearest training samples and predict that single sample.

A linear base learner wrapped this way yields a globally non-linear
decision function, because every query gets its own hyperplanes fitted to
its neighborhood.  The selected neighbor rows are presented to the solver
in ascending original row order, so with k >= n_train the local problem
is bit-identical to the global one.

Classes absent from a neighborhood cannot be predicted (decision -inf);
a single-class neighborhood returns that class with a +inf sentinel and
never invokes the solver.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMatrix
from .errors import MissingLabels, ValidationError
from .neighbors import CosineIndex, top_k
from .svm import SvmConfig, decisions_ova, predict_ova, train_ova

_SINGLE_CLASS_SENTINEL = np.inf


@dataclass(frozen=True)
class LocalLearnerConfig:
    """Neighborhood size and the solver settings for the per-query SVM."""

    k: int = 200
    svm: SvmConfig = field(default_factory=lambda: SvmConfig(C=100.0))

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


@dataclass
class BatchTiming:
    """Per-stage wall-clock seconds for a batch of local predictions."""

    search_s: float = 0.0
    train_s: float = 0.0
    predict_s: float = 0.0
    total_s: float = 0.0
    n_queries: int = 0


def _require_labels(train: FeatureMatrix) -> np.ndarray:
    if train.labels is None:
        raise MissingLabels("local learning requires a labeled training matrix")
    return train.labels


def local_predict_one(
    train: FeatureMatrix,
    q: np.ndarray,
    cfg: LocalLearnerConfig,
    index: CosineIndex | None = None,
) -> tuple[int, dict[int, float]]:
    """Predict one query from its k nearest training rows.

    Returns (class id, per-class decision values over the neighborhood's
    classes).  Pass a prebuilt CosineIndex over ``train`` to amortize norm
    computation across queries.
    """
    labels = _require_labels(train)
    if index is None:
        index = CosineIndex(train)
    neighbor_ids = sorted(i for i, _ in top_k(index, q, cfg.k))
    local_labels = labels[neighbor_ids]
    classes = np.unique(local_labels)
    if classes.size == 1:
        cls = int(classes[0])
        return cls, {cls: _SINGLE_CLASS_SENTINEL}
    model = train_ova(train.values[neighbor_ids], local_labels, cfg.svm)
    decs = decisions_ova(model, np.asarray(q, dtype=np.float64))
    return predict_ova(model, np.asarray(q, dtype=np.float64)), decs


def local_predict_batch(
    train: FeatureMatrix,
    queries: FeatureMatrix,
    cfg: LocalLearnerConfig,
    workers: int = 1,
) -> tuple[np.ndarray, BatchTiming]:
    """Element-wise local_predict_one over query rows, in input order.

    ``workers`` fans queries out over a thread pool; the training matrix
    and index are shared read-only, so results are identical for any
    worker count.  Stage timings are summed across workers.
    """
    labels = _require_labels(train)
    timing = BatchTiming(n_queries=queries.n_samples)
    if queries.n_samples == 0:
        return np.zeros(0, dtype=np.int64), timing
    t_start = time.perf_counter()
    index = CosineIndex(train)

    def one(q: np.ndarray) -> tuple[int, float, float, float]:
        t0 = time.perf_counter()
        neighbor_ids = sorted(i for i, _ in top_k(index, q, cfg.k))
        t1 = time.perf_counter()
        local_labels = labels[neighbor_ids]
        classes = np.unique(local_labels)
        if classes.size == 1:
            t2 = time.perf_counter()
            return int(classes[0]), t1 - t0, t2 - t1, 0.0
        model = train_ova(train.values[neighbor_ids], local_labels, cfg.svm)
        t2 = time.perf_counter()
        pred = predict_ova(model, q)
        t3 = time.perf_counter()
        return pred, t1 - t0, t2 - t1, t3 - t2

    rows = list(queries.values)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, rows))
    else:
        results = [one(q) for q in rows]
    preds = np.array([r[0] for r in results], dtype=np.int64)
    timing.search_s = sum(r[1] for r in results)
    timing.train_s = sum(r[2] for r in results)
    timing.predict_s = sum(r[3] for r in results)
    timing.total_s = time.perf_counter() - t_start
    return preds, timing


def knn_classify(
    train: FeatureMatrix,
    q: np.ndarray,
    k: int,
    index: CosineIndex | None = None,
) -> int:
    """Majority vote over the k cosine-nearest labels.

    Ties break by the class with the highest summed similarity, then by
    the lowest class id.
    """
    labels = _require_labels(train)
    if index is None:
        index = CosineIndex(train)
    votes: dict[int, int] = {}
    sim_sum: dict[int, float] = {}
    for row, sim in top_k(index, q, k):
        cls = int(labels[row])
        votes[cls] = votes.get(cls, 0) + 1
        sim_sum[cls] = sim_sum.get(cls, 0.0) + sim
    best = None
    for cls in sorted(votes):
        key = (votes[cls], sim_sum[cls], -cls)
        if best is None or key > best[0]:
            best = (key, cls)
    return best[1]


def knn_classify_batch(
    train: FeatureMatrix, queries: FeatureMatrix, k: int
) -> np.ndarray:
    index = CosineIndex(train)
    return np.array(
        [knn_classify(train, q, k, index=index) for q in queries.values],
        dtype=np.int64,
    )
