"""Evaluation: per-class F1, confusion matrices, prediction entropy, and
latent-space cluster quality (k-means + homogeneity/completeness/V-measure)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

UNDEFINED = float("nan")


@dataclass
class EvalReport:
    per_class_f1: np.ndarray  # [K]
    macro_f1: float
    confusion: np.ndarray  # [K x K], rows = true, cols = predicted
    entropy_tp: np.ndarray  # [K] mean nats, NaN when no frames
    entropy_fp: np.ndarray  # [K]
    support: np.ndarray  # [K]


@dataclass
class ClusterReport:
    n_clusters_grid: list[int]
    homogeneity: list[float]
    completeness: list[float]
    v_measure: list[float]
    seed: int


def _validate_labels(pred, true, n_classes):
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError("pred and true must have the same shape")
    if np.any(pred < 0) or np.any(pred >= n_classes):
        raise ValueError("predictions must be in [0, K)")
    if np.any(true < -1) or np.any(true >= n_classes):
        raise ValueError("true labels must be in {-1, 0..K-1}")
    return pred, true


def confusion(pred, true, n_classes: int) -> np.ndarray:
    """Counts over frames with true != -1; confusion[i, j] = #(true == i and pred == j)."""
    pred, true = _validate_labels(pred, true, n_classes)
    mask = true >= 0
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (true[mask], pred[mask]), 1)
    return mat


def f1_scores(pred, true, n_classes: int) -> tuple[np.ndarray, float]:
    """Per-class F1 (harmonic mean of precision and recall) and the macro average.

    Frames with true label -1 are excluded; classes absent from both pred and
    true are excluded from the macro mean.
    """
    pred, true = _validate_labels(pred, true, n_classes)
    mask = true >= 0
    if not mask.any():
        raise ValueError("no labeled frames to score")
    pred, true = pred[mask], true[mask]
    per_class = np.zeros(n_classes)
    present = np.zeros(n_classes, dtype=bool)
    for k in range(n_classes):
        tp = np.sum((pred == k) & (true == k))
        fp = np.sum((pred == k) & (true != k))
        fn = np.sum((pred != k) & (true == k))
        present[k] = (tp + fp + fn) > 0
        denom = 2 * tp + fp + fn
        per_class[k] = 2 * tp / denom if denom > 0 else 0.0
    macro = float(per_class[present].mean()) if present.any() else 0.0
    return per_class, macro


def prediction_entropy(probs, pred, true, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean entropy (nats) of the predictive simplex over true-positive and
    false-positive frames, per predicted class. Empty cells are NaN."""
    probs = np.asarray(probs, dtype=np.float64)
    pred, true = _validate_labels(pred, true, n_classes)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.sum(np.where(probs > 0, probs * np.log(probs), 0.0), axis=-1)
    entropy_tp = np.full(n_classes, UNDEFINED)
    entropy_fp = np.full(n_classes, UNDEFINED)
    for k in range(n_classes):
        tp = (pred == k) & (true == k)
        fp = (pred == k) & (true != k) & (true >= 0)
        if tp.any():
            entropy_tp[k] = h[tp].mean()
        if fp.any():
            entropy_fp[k] = h[fp].mean()
    return entropy_tp, entropy_fp


def evaluate_predictions(pred, true, probs, n_classes: int) -> EvalReport:
    per_class, macro = f1_scores(pred, true, n_classes)
    conf = confusion(pred, true, n_classes)
    entropy_tp, entropy_fp = prediction_entropy(probs, pred, true, n_classes)
    return EvalReport(
        per_class_f1=per_class,
        macro_f1=macro,
        confusion=conf,
        entropy_tp=entropy_tp,
        entropy_fp=entropy_fp,
        support=conf.sum(axis=1),
    )


def kmeans(latents, n_clusters: int, seed: int) -> np.ndarray:
    """Lloyd's algorithm with k-means++ initialization, deterministic given seed."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[0] < n_clusters:
        raise ValueError("need at least n_clusters points")
    model = KMeans(n_clusters=n_clusters, init="k-means++", n_init=10, max_iter=300,
                   random_state=seed)
    return model.fit_predict(latents)


def _entropy_of_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def homogeneity(assignments, labels) -> float:
    """1 - H(class | cluster) / H(class), natural logs; 1 when H(class) = 0."""
    h, _ = _homogeneity_completeness(assignments, labels)
    return h


def completeness(assignments, labels) -> float:
    _, c = _homogeneity_completeness(assignments, labels)
    return c


def v_measure(assignments, labels) -> float:
    h, c = _homogeneity_completeness(assignments, labels)
    return 0.0 if h + c == 0 else 2 * h * c / (h + c)


def _homogeneity_completeness(assignments, labels) -> tuple[float, float]:
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if assignments.size == 0:
        raise ValueError("empty input")
    if np.any(labels < 0):
        raise ValueError("exclude unlabeled (-1) frames before scoring clusters")
    clusters, c_idx = np.unique(assignments, return_inverse=True)
    classes, l_idx = np.unique(labels, return_inverse=True)
    joint = np.zeros((classes.size, clusters.size))
    np.add.at(joint, (l_idx, c_idx), 1)
    n = joint.sum()
    h_class = _entropy_of_counts(joint.sum(axis=1))
    h_cluster = _entropy_of_counts(joint.sum(axis=0))
    # conditional entropies from the joint table
    h_class_given_cluster = 0.0
    h_cluster_given_class = 0.0
    for j in range(clusters.size):
        col = joint[:, j]
        h_class_given_cluster += col.sum() / n * _entropy_of_counts(col)
    for i in range(classes.size):
        row = joint[i]
        h_cluster_given_class += row.sum() / n * _entropy_of_counts(row)
    h = 1.0 if h_class == 0 else 1.0 - h_class_given_cluster / h_class
    c = 1.0 if h_cluster == 0 else 1.0 - h_cluster_given_class / h_cluster
    return float(h), float(c)


def cluster_sweep(latents, labels, n_clusters_grid, seed: int) -> ClusterReport:
    """k-means plus cluster-quality scores at each grid point."""
    hs, cs, vs = [], [], []
    for n_clusters in n_clusters_grid:
        a = kmeans(latents, n_clusters, seed)
        h, c = _homogeneity_completeness(a, labels)
        hs.append(h)
        cs.append(c)
        vs.append(0.0 if h + c == 0 else 2 * h * c / (h + c))
    return ClusterReport(
        n_clusters_grid=list(n_clusters_grid),
        homogeneity=hs,
        completeness=cs,
        v_measure=vs,
        seed=seed,
    )


def default_cluster_grid(n_classes: int) -> list[int]:
    return [n_classes, 2 * n_classes, 4 * n_classes, 8 * n_classes]
