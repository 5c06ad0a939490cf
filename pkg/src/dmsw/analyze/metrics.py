"""Confusion-matrix metrics with dropout (label 1) as the positive class."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return asdict(self)


def classification_metrics(pred, true) -> MetricsReport:
    """Accuracy, precision, recall and F1; undefined ratios are reported as 0."""
    pred = np.asarray(pred, dtype=int).ravel()
    true = np.asarray(true, dtype=int).ravel()
    if pred.size == 0:
        raise ValueError("empty input")
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {true.size} labels")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsReport((tp + tn) / pred.size, precision, recall, f1, tp, fp, tn, fn)
