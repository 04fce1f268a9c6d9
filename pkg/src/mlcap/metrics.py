"""Confusion-matrix metrics and rank-based AUC."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .cdi import CLASS2


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    n_cases: int
    wall_time_seconds: float = 0.0
    positive_class: int = CLASS2

    def to_dict(self) -> dict:
        return asdict(self)


def auc_score(y_true, scores, positive_class: int = CLASS2) -> float | None:
    """Mann-Whitney AUC with mid-ranks for ties; ``None`` if a class is absent."""
    y = np.asarray(y_true) == positive_class
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def confusion_metrics(y_true, y_pred, positive_class: int = CLASS2) -> tuple[float, float, float, float]:
    """Accuracy, precision, recall and F1; undefined ratios are reported as 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(np.sum((y_pred == positive_class) & (y_true == positive_class)))
    fp = int(np.sum((y_pred == positive_class) & (y_true != positive_class)))
    fn = int(np.sum((y_pred != positive_class) & (y_true == positive_class)))
    acc = float(np.mean(y_true == y_pred))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return acc, precision, recall, f1


def traditional_metrics(model, X, y_true, positive_class: int = CLASS2) -> MetricsReport:
    """Evaluate ``model`` on a held-out set, timing the whole evaluation.

    Cases pass through the network one at a time, the same way the adaptive
    loop presents them, so the two wall-times are comparable.
    """
    X = np.asarray(X, dtype=float)
    y_true = np.asarray(y_true)
    if X.shape[0] == 0:
        raise ValueError("empty test set")
    t0 = time.perf_counter()
    preds = np.empty(X.shape[0], dtype=int)
    scores = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        preds[i], scores[i] = model.predict(X[i])
    acc, prec, rec, f1 = confusion_metrics(y_true, preds, positive_class)
    auc = auc_score(y_true, scores if positive_class == CLASS2 else 1.0 - scores, positive_class)
    elapsed = time.perf_counter() - t0
    return MetricsReport(acc, prec, rec, f1, auc, int(X.shape[0]), elapsed, positive_class)
