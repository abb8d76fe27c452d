"""Binary classification metrics: accuracy, ROC points and pairwise AUC.

AUC is the Mann-Whitney statistic computed over all (positive, negative)
pairs with ties counted as half: exact, order-free and cheap at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoredBatch:
    """Fake-class probabilities paired with ground-truth 0/1 labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError(
                f"scores and labels must be equal-length vectors, "
                f"got {self.scores.shape} and {self.labels.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.scores.size


def accuracy(batch: ScoredBatch, threshold: float = 0.5) -> float:
    """Fraction of samples whose thresholded score matches the label.

    A score exactly at the threshold counts as predicted fake.
    """
    if len(batch) == 0:
        raise ValueError("accuracy: empty batch")
    preds = (batch.scores >= threshold).astype(int)
    return float(np.mean(preds == batch.labels))


def auc(batch: ScoredBatch) -> float:
    """Area under the ROC curve via exhaustive pair comparison.

    Over all (positive, negative) pairs: wins count 1, ties count 0.5.
    Undefined (raises) when only one class is present.
    """
    pos = batch.scores[batch.labels == 1]
    neg = batch.scores[batch.labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc: need at least one positive and one negative label")
    wins = (pos[:, None] > neg[None, :]).sum(dtype=np.float64)
    ties = (pos[:, None] == neg[None, :]).sum(dtype=np.float64)
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def roc_points(batch: ScoredBatch) -> list[tuple[float, float]]:
    """ROC staircase from (0,0) to (1,1), one point per distinct score.

    Tied scores collapse into a single diagonal segment, so the trapezoidal
    integral of these points equals the pairwise AUC.
    """
    pos_total = int((batch.labels == 1).sum())
    neg_total = int((batch.labels == 0).sum())
    if pos_total == 0 or neg_total == 0:
        raise ValueError("roc_points: need at least one positive and one negative label")
    order = np.argsort(-batch.scores, kind="stable")
    scores = batch.scores[order]
    labels = batch.labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j < n and scores[j] == scores[i]:
            j += 1
        tp += int((labels[i:j] == 1).sum())
        fp += int((labels[i:j] == 0).sum())
        points.append((fp / neg_total, tp / pos_total))
        i = j
    return points


def roc_auc_trapezoid(points: list[tuple[float, float]]) -> float:
    """Trapezoidal integral of an ROC staircase."""
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.trapz(tpr, fpr))
