"""One-vs-rest linear SVM trained by dual coordinate descent (hinge loss)."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .media_io import _check_magic, _read_exact


@dataclass
class LinearModel:
    classes: np.ndarray  # (c,) labels
    weights: np.ndarray  # (c, d)
    bias: np.ndarray  # (c,)
    C: float = 100.0
    history: dict = field(default_factory=dict)  # class -> [(incumbent primal, dual)] per epoch

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"input has dimension {x.shape[-1]}, model expects {self.dim}")
        return x @ self.weights.T + self.bias


def _binary_dcd(gram: np.ndarray, y: np.ndarray, C: float, max_epochs: int, gap_tol: float):
    """Dual CD on min 1/2|w|^2 + C sum hinge, with ``gram`` including the bias feature.

    Dual CD does not decrease the primal monotonically, so the best primal
    iterate seen so far is kept as the incumbent and returned.  The gap
    P(incumbent) - D(alpha) is still a valid optimality certificate.
    History holds (incumbent primal, current dual) per epoch.
    """
    n = len(y)
    alpha = np.zeros(n)
    f = np.zeros(n)  # f_i = w . x_i
    qd = np.diag(gram).copy()
    best_alpha, best_primal = alpha.copy(), C * float(n)  # w = 0
    hist = []
    for _ in range(max_epochs):
        for i in range(n):
            if qd[i] <= 0:
                continue
            g = y[i] * f[i] - 1.0
            a = alpha[i]
            pg = min(g, 0.0) if a == 0 else (max(g, 0.0) if a == C else g)
            if pg == 0.0:
                continue
            new = min(max(a - g / qd[i], 0.0), C)
            delta = new - a
            if delta != 0.0:
                f += (delta * y[i]) * gram[:, i]
                alpha[i] = new
        f = gram @ (alpha * y)  # refresh to stop drift in the running sums
        wnorm2 = float(np.dot(alpha * y, f))
        primal = 0.5 * wnorm2 + C * float(np.maximum(0.0, 1.0 - y * f).sum())
        dual = float(alpha.sum()) - 0.5 * wnorm2
        if primal <= best_primal:
            best_primal, best_alpha = primal, alpha.copy()
        hist.append((best_primal, dual))
        if best_primal - dual < gap_tol:
            break
    return best_alpha, hist


def train(X, y, C: float = 100.0, max_epochs: int = 1000, gap_tol: float = 1e-3) -> LinearModel:
    """Fit one binary SVM per class (class vs rest); bias is an appended constant-1 feature."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if C <= 0:
        raise ValueError("C must be positive")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("training needs at least two classes")
    gram = X @ X.T + 1.0
    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    history = {}
    for c, label in enumerate(classes):
        yb = np.where(y == label, 1.0, -1.0)
        alpha, hist = _binary_dcd(gram, yb, C, max_epochs, gap_tol)
        ay = alpha * yb
        W[c] = ay @ X
        b[c] = ay.sum()
        history[label.item() if hasattr(label, "item") else label] = hist
    return LinearModel(classes, W, b, C, history)


def predict(model: LinearModel, x) -> np.ndarray:
    """Arg-max class per row (lowest class index wins ties); scalar for a single vector."""
    x = np.asarray(x, dtype=np.float64)
    scores = model.decision(np.atleast_2d(x))
    labels = model.classes[np.argmax(scores, axis=1)]
    return labels[0] if x.ndim == 1 else labels


def accuracy(model: LinearModel, X, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        return 0.0
    return float(np.mean(predict(model, np.atleast_2d(X)) == y))


def write_model(path, model: LinearModel) -> None:
    c, d = model.weights.shape
    with open(path, "wb") as fh:
        fh.write(b"SVM1" + struct.pack("<IIf", c, d, model.C))
        fh.write(np.asarray(model.classes, dtype="<i4").tobytes())
        fh.write(np.asarray(model.weights, dtype="<f4").tobytes())
        fh.write(np.asarray(model.bias, dtype="<f4").tobytes())


def read_model(path) -> LinearModel:
    with open(path, "rb") as fh:
        _check_magic(fh, b"SVM1", "model")
        c, d, C = struct.unpack("<IIf", _read_exact(fh, 12, "model"))
        classes = np.frombuffer(_read_exact(fh, 4 * c, "model"), "<i4").astype(np.int64)
        W = np.frombuffer(_read_exact(fh, 4 * c * d, "model"), "<f4").reshape(c, d).astype(np.float64)
        b = np.frombuffer(_read_exact(fh, 4 * c, "model"), "<f4").astype(np.float64)
    return LinearModel(classes, W, b, float(C))
