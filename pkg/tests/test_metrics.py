import math

import numpy as np
import pytest

from actionseg.metrics import (
    cluster_sweep,
    completeness,
    confusion,
    default_cluster_grid,
    evaluate_predictions,
    f1_scores,
    homogeneity,
    kmeans,
    prediction_entropy,
    v_measure,
)


class TestConfusion:
    def test_hand_counts(self):
        pred = [0, 0, 1, 1, 0]
        true = [0, 1, 1, 1, -1]
        mat = confusion(pred, true, 2)
        assert mat.tolist() == [[1, 0], [1, 2]]

    def test_unlabeled_excluded(self):
        mat = confusion([0, 1], [-1, -1], 2)
        assert mat.sum() == 0

    def test_diagonal_when_perfect(self):
        rng = np.random.default_rng(0)
        true = rng.integers(0, 4, size=200)
        mat = confusion(true, true, 4)
        assert (mat == np.diag(np.bincount(true, minlength=4))).all()

    def test_bad_prediction_range(self):
        with pytest.raises(ValueError):
            confusion([0, 5], [0, 1], 3)


class TestF1:
    def test_perfect(self):
        per, macro = f1_scores([0, 1, 2], [0, 1, 2], 3)
        assert per.tolist() == [1.0, 1.0, 1.0] and macro == 1.0

    def test_hand_arithmetic_four_sevenths(self):
        # class 0: tp=2, fp=1, fn=2 -> F1 = 4/7
        pred = [0, 0, 0, 1, 1]
        true = [0, 0, 1, 0, 0]
        per, _ = f1_scores(pred, true, 2)
        assert abs(per[0] - 4 / 7) < 1e-12

    def test_macro_is_mean_over_present_classes(self):
        # class 2 never appears in pred or true -> excluded from the macro mean
        pred = [0, 0, 1, 1]
        true = [0, 1, 1, 1]
        per, macro = f1_scores(pred, true, 3)
        f0 = 2 * 1 / (2 * 1 + 1 + 0)
        f1 = 2 * 2 / (2 * 2 + 0 + 1)
        assert abs(macro - (f0 + f1) / 2) < 1e-12
        assert per[2] == 0.0

    def test_all_wrong_zero(self):
        _, macro = f1_scores([1, 1, 0, 0], [0, 0, 1, 1], 2)
        assert macro == 0.0

    def test_no_labeled_frames_raises(self):
        with pytest.raises(ValueError):
            f1_scores([0, 1], [-1, -1], 2)


class TestPredictionEntropy:
    def test_one_hot_zero_entropy(self):
        probs = np.eye(2)[[0, 1, 0]]
        tp, fp = prediction_entropy(probs, [0, 1, 0], [0, 1, 1], 2)
        assert tp[0] == 0.0 and fp[0] == 0.0
        assert np.isnan(fp[1])

    def test_uniform_log_k(self):
        probs = np.full((4, 3), 1 / 3)
        tp, _ = prediction_entropy(probs, [0, 0, 1, 2], [0, 0, 1, 2], 3)
        assert np.allclose(tp, math.log(3))

    def test_tp_fp_split(self):
        # predicted class 0 on a true-0 frame (confident) and a true-1 frame (uncertain)
        probs = np.array([[0.9, 0.1], [0.6, 0.4]])
        tp, fp = prediction_entropy(probs, [0, 0], [0, 1], 2)
        h = lambda p: -(p * math.log(p) + (1 - p) * math.log(1 - p))
        assert abs(tp[0] - h(0.9)) < 1e-12
        assert abs(fp[0] - h(0.6)) < 1e-12


class TestEvaluatePredictions:
    def test_report_fields_consistent(self):
        rng = np.random.default_rng(1)
        true = rng.integers(0, 3, size=100)
        pred = true.copy()
        flip = rng.random(100) < 0.2
        pred[flip] = (pred[flip] + 1) % 3
        probs = np.full((100, 3), 1 / 3)
        report = evaluate_predictions(pred, true, probs, 3)
        assert report.confusion.sum() == 100
        assert report.support.tolist() == np.bincount(true, minlength=3).tolist()
        per, macro = f1_scores(pred, true, 3)
        assert report.macro_f1 == macro


class TestKMeans:
    def _blobs(self, n_per=100, seed=0):
        rng = np.random.default_rng(seed)
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        pts = np.concatenate([c + 0.3 * rng.normal(size=(n_per, 2)) for c in centers])
        labels = np.repeat([0, 1, 2], n_per)
        return pts, labels

    def test_recovers_separated_blobs(self):
        pts, labels = self._blobs()
        a = kmeans(pts, 3, seed=0)
        assert homogeneity(a, labels) > 0.999
        assert completeness(a, labels) > 0.999

    def test_deterministic_given_seed(self):
        pts, _ = self._blobs(seed=1)
        assert np.array_equal(kmeans(pts, 3, seed=5), kmeans(pts, 3, seed=5))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((2, 2)), 3, seed=0)


class TestClusterQuality:
    def test_perfect_match(self):
        labels = [0, 0, 1, 1, 2, 2]
        assert homogeneity(labels, labels) == 1.0
        assert completeness(labels, labels) == 1.0
        assert v_measure(labels, labels) == 1.0

    def test_single_cluster(self):
        # one cluster: fully complete, homogeneity 0 for a balanced 2-class set
        a = [0, 0, 0, 0]
        labels = [0, 0, 1, 1]
        assert homogeneity(a, labels) == 0.0
        assert completeness(a, labels) == 1.0
        assert v_measure(a, labels) == 0.0

    def test_singleton_clusters(self):
        # every point its own cluster: fully homogeneous; completeness is
        # 1 - H(cluster|class)/H(cluster) = 1 - log2/log4 = 1/2 here
        a = [0, 1, 2, 3]
        labels = [0, 0, 1, 1]
        assert homogeneity(a, labels) == 1.0
        assert abs(completeness(a, labels) - 0.5) < 1e-12

    def test_entropy_table_oracle(self):
        # 2x2 joint table [[3, 1], [1, 3]]: hand-computed conditional entropies
        a = [0] * 4 + [1] * 4
        labels = [0, 0, 0, 1, 0, 1, 1, 1]
        n = 8.0
        h_cond = 2 * (4 / n) * (-(3 / 4) * math.log(3 / 4) - (1 / 4) * math.log(1 / 4))
        h_class = math.log(2)
        expected_h = 1 - h_cond / h_class
        assert abs(homogeneity(a, labels) - expected_h) < 1e-12
        assert abs(completeness(a, labels) - expected_h) < 1e-12
        v = v_measure(a, labels)
        assert abs(v - expected_h) < 1e-12

    def test_random_assignments_low_homogeneity(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 3, size=5000)
        a = rng.integers(0, 3, size=5000)
        assert homogeneity(a, labels) < 0.01

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 3, size=300)
        a = rng.integers(0, 4, size=300)
        perm = np.array([2, 0, 3, 1])
        assert abs(homogeneity(a, labels) - homogeneity(perm[a], labels)) < 1e-12
        assert abs(completeness(a, labels) - completeness(perm[a], labels)) < 1e-12

    def test_negative_labels_rejected(self):
        with pytest.raises(ValueError):
            homogeneity([0, 1], [0, -1])

    def test_matches_sklearn(self):
        from sklearn.metrics import homogeneity_completeness_v_measure

        rng = np.random.default_rng(4)
        labels = rng.integers(0, 4, size=400)
        a = rng.integers(0, 6, size=400)
        h, c, v = homogeneity_completeness_v_measure(labels, a)
        assert abs(homogeneity(a, labels) - h) < 1e-10
        assert abs(completeness(a, labels) - c) < 1e-10
        assert abs(v_measure(a, labels) - v) < 1e-10


class TestClusterSweep:
    def test_default_grid(self):
        assert default_cluster_grid(3) == [3, 6, 12, 24]

    def test_sweep_shapes_and_monotone_homogeneity_trend(self):
        rng = np.random.default_rng(5)
        centers = rng.normal(scale=8, size=(4, 3))
        pts = np.concatenate([c + rng.normal(size=(80, 3)) for c in centers])
        labels = np.repeat(np.arange(4), 80)
        report = cluster_sweep(pts, labels, [4, 8, 16], seed=0)
        assert report.n_clusters_grid == [4, 8, 16]
        assert len(report.homogeneity) == 3
        # more clusters cannot hurt homogeneity on well-separated blobs
        assert report.homogeneity[2] >= report.homogeneity[0] - 1e-9
        for h, c, v in zip(report.homogeneity, report.completeness, report.v_measure):
            if h + c > 0:
                assert abs(v - 2 * h * c / (h + c)) < 1e-12
