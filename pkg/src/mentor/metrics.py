"""Classification metrics and quantile labeling."""

from __future__ import annotations

import warnings

import numpy as np

__all__ = ["metrics", "confusion_matrix", "macro_auroc", "quantile_labels"]


def confusion_matrix(labels: np.ndarray, predicted: np.ndarray, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predicted), 1)
    return cm


def _binary_auroc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Rank-statistic AUROC with average ranks on ties (Mann-Whitney)."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.shape[0])
    sorted_scores = scores[order]
    # average rank within tied runs
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(positive.sum())
    n_neg = positive.shape[0] - n_pos
    rank_sum = ranks[positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auroc(labels: np.ndarray, probabilities: np.ndarray) -> float:
    """One-vs-rest AUROC averaged over classes present in the labels.

    Classes with no positives or no negatives are excluded with a warning.
    """
    labels = np.asarray(labels)
    probabilities = np.asarray(probabilities)
    per_class = []
    for c in range(probabilities.shape[1]):
        positive = labels == c
        n_pos = int(positive.sum())
        if n_pos == 0 or n_pos == labels.shape[0]:
            warnings.warn(
                f"AUROC undefined for class {c} (single-class labels), excluded",
                stacklevel=2,
            )
            continue
        per_class.append(_binary_auroc(probabilities[:, c], positive))
    if not per_class:
        return float("nan")
    return float(np.mean(per_class))


def metrics(labels: np.ndarray, probabilities: np.ndarray) -> dict:
    """Accuracy on the argmax, macro one-vs-rest AUROC, and confusion counts."""
    labels = np.asarray(labels, dtype=np.int64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    sums = probabilities.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-5):
        raise ValueError("probability rows must sum to 1")
    predicted = probabilities.argmax(axis=1)
    acc = float((predicted == labels).mean())
    cm = confusion_matrix(labels, predicted, probabilities.shape[1])
    return {
        "accuracy": acc,
        "auroc_macro": macro_auroc(labels, probabilities),
        "confusion": cm,
    }


def quantile_labels(scores: np.ndarray, num_classes: int = 3) -> np.ndarray:
    """Bucket scores by equally spaced quantiles; cut-point ties go low.

    Constant score vectors collapse every cut and land everything in
    bucket 0, reported with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] < num_classes:
        raise ValueError("need at least num_classes scores")
    cuts = np.quantile(scores, [(j + 1) / num_classes for j in range(num_classes - 1)])
    if np.unique(cuts).shape[0] < cuts.shape[0] or scores.min() == scores.max():
        warnings.warn("degenerate quantile cuts (constant or heavily tied scores)",
                      stacklevel=2)
    labels = np.zeros(scores.shape[0], dtype=np.int64)
    for cut in cuts:
        labels += scores > cut
    return labels
