"""Loss functions returning ``(value, gradient)`` pairs."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

FLOOR = 1e-12


def cross_entropy_loss(scores, target) -> float:
    """Categorical cross-entropy ``-sum t log s`` with scores floored at 1e-12."""
    s = np.asarray(scores, dtype=float)
    t = np.asarray(target, dtype=float)
    if s.shape != t.shape:
        raise ShapeMismatch(f"scores {s.shape} vs target {t.shape}")
    return float(-np.sum(t * np.log(np.maximum(s, FLOOR))))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax(logits) rows against integer labels.

    Returns ``(loss, dlogits, probs)``; ``dlogits`` is ``(s - t) / B``.
    """
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    B = logits.shape[0]
    rows = np.arange(B)
    loss = float(-np.mean(np.log(np.maximum(s[rows, labels], FLOOR))))
    d = s.copy()
    d[rows, labels] -= 1.0
    return loss, d / B, s


def mse_loss(pred, truth):
    """``(1/n) sum (y - x)^2`` over all elements; returns ``(loss, dpred)``."""
    x = np.asarray(pred, dtype=float)
    y = np.asarray(truth, dtype=float)
    if x.shape != y.shape or x.size == 0:
        raise ShapeMismatch(f"pred {x.shape} vs truth {y.shape}")
    diff = x - y
    return float(np.mean(diff * diff)), 2.0 * diff / x.size
