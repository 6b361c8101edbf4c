import numpy as np
import pytest

from locallearn.core import FeatureMatrix
from locallearn.errors import MissingLabels
from locallearn.local import (
    LocalLearnerConfig,
    knn_classify,
    knn_classify_batch,
    local_predict_batch,
    local_predict_one,
)
from locallearn.svm import SvmConfig, decisions_ova, predict_ova, train_ova
from locallearn.synth import as_feature_matrix, gaussian_blobs, two_arcs


def labeled(X, y, prefix="s"):
    return as_feature_matrix(np.asarray(X, dtype=np.float64), np.asarray(y), prefix)


class TestDegeneracy:
    def test_k_covering_train_equals_global(self):
        # With k >= n_train the local problem is the global problem: both
        # class predictions and decision values must match bit for bit.
        rng = np.random.default_rng(0)
        for trial in range(5):
            X = rng.normal(size=(30, 4))
            y = rng.integers(0, 3, 30)
            train = labeled(X, y)
            cfg = LocalLearnerConfig(k=50, svm=SvmConfig(C=10.0, seed=trial))
            ova = train_ova(X, y, cfg.svm)
            for q in rng.normal(size=(8, 4)):
                local_cls, local_dec = local_predict_one(train, q, cfg)
                assert local_cls == predict_ova(ova, q)
                global_dec = decisions_ova(ova, q)
                assert local_dec.keys() == global_dec.keys()
                for cls in global_dec:
                    assert local_dec[cls] == global_dec[cls]  # bit-equal


class TestSingleClassNeighborhood:
    def test_short_circuit(self):
        X = np.vstack([np.full((5, 2), 10.0) + np.eye(5, 2) * 0.01,
                       -np.full((5, 2), 10.0)])
        y = np.array([0] * 5 + [1] * 5)
        train = labeled(X, y)
        cfg = LocalLearnerConfig(k=3, svm=SvmConfig(C=1.0))
        cls, decs = local_predict_one(train, np.array([10.0, 10.0]), cfg)
        assert cls == 0
        assert decs == {0: np.inf}

    def test_absent_class_never_predicted(self):
        rng = np.random.default_rng(1)
        X, y = gaussian_blobs(30, n_classes=3, spread=0.3, seed=2)
        train = labeled(X, y)
        cfg = LocalLearnerConfig(k=10, svm=SvmConfig(C=10.0))
        q = X[y == 2].mean(axis=0)
        cls, decs = local_predict_one(train, q, cfg)
        present = set(decs)
        assert cls in present


class TestLocality:
    def test_non_neighbor_perturbation_is_invisible(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 3))
        y = rng.integers(0, 2, 40)
        y[:2] = [0, 1]
        train = labeled(X, y)
        cfg = LocalLearnerConfig(k=10, svm=SvmConfig(C=5.0, seed=0))
        q = rng.normal(size=3)
        from locallearn.neighbors import CosineIndex, top_k

        neighbor_ids = {i for i, _ in top_k(CosineIndex(train), q, 10)}
        outsider = next(i for i in range(40) if i not in neighbor_ids)
        X2 = X.copy()
        X2[outsider] = X2[outsider] * 0.5 + 100.0  # stays outside the top-k cone
        train2 = labeled(X2, y)
        neighbor_ids2 = {i for i, _ in top_k(CosineIndex(train2), q, 10)}
        assert neighbor_ids2 == neighbor_ids
        r1 = local_predict_one(train, q, cfg)
        r2 = local_predict_one(train2, q, cfg)
        assert r1 == r2

    def test_query_scale_invariance_of_neighbors(self):
        # Cosine selection ignores the query's magnitude, so the id set is
        # identical for c*q; decision values are not claimed invariant.
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 4))
        train = labeled(X, rng.integers(0, 2, 50))
        from locallearn.neighbors import CosineIndex, top_k

        index = CosineIndex(train)
        q = rng.normal(size=4)
        for c in (0.01, 3.5, 1000.0):
            assert [i for i, _ in top_k(index, q, 7)] == [
                i for i, _ in top_k(index, c * q, 7)
            ]


class TestBatch:
    def test_empty_queries(self):
        train = labeled(np.eye(3), [0, 1, 0])
        queries = FeatureMatrix(np.zeros((0, 3)), [])
        preds, timing = local_predict_batch(train, queries, LocalLearnerConfig(k=2))
        assert preds.shape == (0,)
        assert timing.n_queries == 0

    def test_singleton_matches_one(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 3))
        y = rng.integers(0, 2, 20)
        y[:2] = [0, 1]
        train = labeled(X, y)
        cfg = LocalLearnerConfig(k=5, svm=SvmConfig(C=2.0, seed=1))
        q = rng.normal(size=3)
        queries = FeatureMatrix(q[None, :], ["q0"])
        preds, _ = local_predict_batch(train, queries, cfg)
        assert preds[0] == local_predict_one(train, q, cfg)[0]

    def test_worker_count_invariance(self):
        rng = np.random.default_rng(6)
        Xtr, ytr = two_arcs(300, seed=31)
        Xte, _ = two_arcs(40, seed=32)
        train = labeled(Xtr, ytr)
        queries = as_feature_matrix(Xte, prefix="q")
        cfg = LocalLearnerConfig(k=25, svm=SvmConfig(C=100.0, seed=0, max_passes=200))
        p1, _ = local_predict_batch(train, queries, cfg, workers=1)
        p4, _ = local_predict_batch(train, queries, cfg, workers=4)
        assert np.array_equal(p1, p4)

    def test_requires_labels(self):
        train = FeatureMatrix(np.eye(3), ["a", "b", "c"])
        with pytest.raises(MissingLabels):
            local_predict_batch(train, train, LocalLearnerConfig(k=1))


class TestTwoArcs:
    def test_local_beats_global_linear(self):
        # Compact version of the acceptance geometry: points deep in the
        # interleaved region flip to correct under local learning.
        Xtr, ytr = two_arcs(800, seed=41)
        Xte, yte = two_arcs(120, seed=42)
        train = labeled(Xtr, ytr)
        cfg = SvmConfig(C=100.0, seed=0, tolerance=1e-3, max_passes=300)
        ova = train_ova(Xtr, ytr, cfg)
        from locallearn.svm import predict_ova_batch

        global_acc = np.mean(predict_ova_batch(ova, Xte) == yte)
        local_pred, _ = local_predict_batch(
            train, as_feature_matrix(Xte, prefix="t"),
            LocalLearnerConfig(k=40, svm=cfg),
        )
        local_acc = np.mean(local_pred == yte)
        assert local_acc > global_acc

    def test_misclassified_overlap_point_fixed_locally(self):
        Xtr, ytr = two_arcs(2000, seed=43)
        train = labeled(Xtr, ytr)
        cfg = SvmConfig(C=100.0, seed=0, tolerance=1e-3, max_passes=300)
        ova = train_ova(Xtr, ytr, cfg)
        from locallearn.svm import predict_ova_batch

        # The tip of the lower arc (t near sweep*pi) curls deep into the
        # upper arc's territory; find such test points and check the local
        # model recovers at least one the global hyperplane misses.
        Xte, yte = two_arcs(300, seed=44)
        gp = predict_ova_batch(ova, Xte)
        wrong = np.flatnonzero(gp != yte)
        assert wrong.size > 0
        local_cfg = LocalLearnerConfig(k=50, svm=cfg)
        fixed = 0
        for i in wrong[:20]:
            cls, _ = local_predict_one(train, Xte[i], local_cfg)
            fixed += cls == yte[i]
        assert fixed > 0


class TestKnn:
    def test_k1_nearest_label(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        train = labeled(X, [0, 1])
        assert knn_classify(train, np.array([0.9, 0.1]), 1) == 0

    def test_majority(self):
        X = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
        train = labeled(X, [0, 0, 1])
        assert knn_classify(train, np.array([1.0, 0.05]), 3) == 0

    def test_tie_broken_by_summed_similarity(self):
        # Two votes each; class 1's neighbors are more similar to q.
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.2], [0.8, 0.25]])
        y = [0, 0, 1, 1]
        train = labeled(X, y)
        assert knn_classify(train, np.array([1.0, 0.2]), 4) == 1

    def test_tie_final_fallback_lowest_class(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0]])
        train = labeled(X, [1, 0])
        assert knn_classify(train, np.array([1.0, 0.0]), 2) == 0

    def test_batch_matches_single(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 3))
        y = rng.integers(0, 3, 30)
        train = labeled(X, y)
        queries = rng.normal(size=(5, 3))
        batch = knn_classify_batch(train, as_feature_matrix(queries, prefix="q"), 7)
        singles = [knn_classify(train, q, 7) for q in queries]
        assert batch.tolist() == singles
