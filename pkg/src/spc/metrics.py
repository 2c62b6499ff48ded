"""Evaluation metrics: macro-F1/recall, correlations, clustering scores.

Zero-division convention: per-class precision, recall and F1 are 0 whenever
their denominator is 0, and macro averages always run over all C classes
(a class absent from both gold and predictions contributes 0). This is
stated prominently because it shifts macro scores on sparse label sets.
"""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    """Undefined metric value (e.g. correlation of a constant sequence)."""


def confusion_matrix(gold, pred, num_classes: int) -> np.ndarray:
    """C x C counts; rows index gold labels, columns predicted labels."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape or gold.ndim != 1:
        raise MetricError("gold and pred must be equal-length 1-D arrays")
    if gold.size == 0:
        raise MetricError("empty input")
    if np.any((gold < 0) | (gold >= num_classes) | (pred < 0) | (pred >= num_classes)):
        raise MetricError(f"labels out of range [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    return cm


def _per_class_stats(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(cm).astype(np.float64)
    gold_count = cm.sum(axis=1).astype(np.float64)
    pred_count = cm.sum(axis=0).astype(np.float64)
    precision = np.divide(tp, pred_count, out=np.zeros_like(tp), where=pred_count > 0)
    recall = np.divide(tp, gold_count, out=np.zeros_like(tp), where=gold_count > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1


def macro_f1(gold, pred, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all `num_classes` classes."""
    _, _, f1 = _per_class_stats(confusion_matrix(gold, pred, num_classes))
    return float(f1.mean())


def f1_of_class(gold, pred, cls: int) -> float:
    """F1 = 2PR/(P+R) of one class; 0 when P+R = 0."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    num_classes = int(max(gold.max(initial=0), pred.max(initial=0), cls)) + 1
    if cls < 0:
        raise MetricError(f"class {cls} out of range")
    _, _, f1 = _per_class_stats(confusion_matrix(gold, pred, num_classes))
    return float(f1[cls])


def macro_recall(gold, pred, num_classes: int) -> float:
    _, recall, _ = _per_class_stats(confusion_matrix(gold, pred, num_classes))
    return float(recall.mean())


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise MetricError("pearson needs two equal-length 1-D arrays of size >= 2")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        raise MetricError("correlation undefined for constant input")
    return float((da * db).sum() / denom)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Fractional ranks starting at 1; ties share the mean of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Pearson correlation of average-tie fractional ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise MetricError("spearman needs two equal-length 1-D arrays of size >= 2")
    return pearson(_average_ranks(a), _average_ranks(b))


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return (diff * diff).sum(axis=2)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total == 0.0:
            centers[c] = points[rng.integers(n)]
        else:
            centers[c] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, k: int, seed: int,
           iters: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, k, rng)
    assign = np.zeros(points.shape[0], dtype=np.int64)
    inertia_history: list[float] = []
    for _ in range(iters):
        dists = _pairwise_sq_dists(points, centers)
        new_assign = dists.argmin(axis=1)
        for c in range(k):
            members = points[new_assign == c]
            if members.size == 0:
                # revive on the point farthest from its assigned center
                farthest = dists[np.arange(points.shape[0]), new_assign].argmax()
                centers[c] = points[farthest]
                new_assign[farthest] = c
            else:
                centers[c] = members.mean(axis=0)
        inertia = float(((points - centers[new_assign]) ** 2).sum())
        inertia_history.append(inertia)
        if np.array_equal(new_assign, assign) and len(inertia_history) > 1:
            assign = new_assign
            break
        assign = new_assign
    return assign, centers, inertia_history


def kmeans(points, k: int, seed: int = 0, iters: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; deterministic given seed."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise MetricError(f"points must be 2-D, got shape {points.shape}")
    if not 1 <= k <= points.shape[0]:
        raise MetricError(f"k must be in [1, {points.shape[0]}], got {k}")
    assign, _, _ = _lloyd(points, k, seed, iters)
    return assign


def silhouette(points, assignments) -> float:
    """Mean over points of (b - a) / max(a, b) with Euclidean distances.

    a is the mean distance to the point's own cluster (excluding itself),
    b the smallest mean distance to any other cluster. A point alone in its
    cluster contributes 0.
    """
    points = np.asarray(points, dtype=np.float64)
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.unique(assignments)
    if labels.size < 2:
        raise MetricError("silhouette needs at least 2 clusters")
    dists = np.sqrt(np.maximum(_pairwise_sq_dists(points, points), 0.0))
    scores = np.zeros(points.shape[0])
    members = {c: np.flatnonzero(assignments == c) for c in labels}
    for i in range(points.shape[0]):
        own = members[assignments[i]]
        if own.size == 1:
            continue  # singleton contributes 0
        a = dists[i, own].sum() / (own.size - 1)
        b = min(dists[i, members[c]].mean() for c in labels if c != assignments[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def adjusted_rand_index(assign_a, assign_b) -> float:
    """Chance-corrected pair-counting agreement between two partitions."""
    a = np.asarray(assign_a, dtype=np.int64)
    b = np.asarray(assign_b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("partitions must be equal-length 1-D arrays")
    n = a.size
    _, a_ids = np.unique(a, return_inverse=True)
    _, b_ids = np.unique(b, return_inverse=True)
    contingency = np.zeros((a_ids.max() + 1, b_ids.max() + 1), dtype=np.int64)
    np.add.at(contingency, (a_ids, b_ids), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    index = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0  # both partitions trivial in the same way => identical
    return float((index - expected) / (max_index - expected))
