"""L2-regularised logistic regression baselines trained by plain gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import sigmoid
from ..preprocess import LabeledVectorSet
from .metrics import MetricsReport, classification_metrics


@dataclass
class LogisticModel:
    w: np.ndarray
    b: float
    mean: np.ndarray
    scale: np.ndarray

    def predict_proba(self, X) -> np.ndarray:
        Xs = (np.asarray(X, dtype=float) - self.mean) / self.scale
        return sigmoid(Xs @ self.w + self.b)


def logreg_fit(X, y, l2: float = 0.01, lr: float = 0.1, epochs: int = 500) -> LogisticModel:
    """Fit on standardised columns starting from zero weights, so the result is seed-free."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError(f"bad shapes: X {X.shape}, y {y.shape}")
    if len(np.unique(y)) < 2:
        raise ValueError("training set has a single class")
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    scale = np.where(sd > 1e-12, sd, 1.0)
    Xs = (X - mean) / scale
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        r = sigmoid(Xs @ w + b) - y
        w -= lr * (Xs.T @ r / n + l2 * w)
        b -= lr * float(r.mean())
    return LogisticModel(w, b, mean, scale)


def baseline_logreg(train: LabeledVectorSet, test: LabeledVectorSet, l2: float = 0.01, lr: float = 0.1,
                    epochs: int = 500, threshold: float = 0.5) -> MetricsReport:
    model = logreg_fit(train.rows, train.labels, l2, lr, epochs)
    pred = (model.predict_proba(test.rows) >= threshold).astype(int)
    return classification_metrics(pred, test.labels)
