"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np


def relative_error(a, n, floor: float = 1e-6) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(loss: Callable[[], float], arr: np.ndarray, eps: float = 1e-5,
                     index=None) -> np.ndarray:
    """Central differences of ``loss()`` w.r.t. ``arr`` (perturbed in place).

    ``index`` restricts the check to a subset of flat indices.
    """
    flat = arr.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        up = loss()
        flat[i] = old - eps
        down = loss()
        flat[i] = old
        out[i] = (up - down) / (2.0 * eps)
    return out.reshape(arr.shape)


def check_gradients(loss: Callable[[], float], params: dict, grads: dict, eps: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between ``grads`` and finite differences over ``params``."""
    worst = 0.0
    for k, p in params.items():
        index = None
        if max_entries is not None and p.size > max_entries:
            rng = rng or np.random.default_rng(0)
            index = rng.choice(p.size, size=max_entries, replace=False)
        num = numeric_gradient(loss, p, eps, index)
        ana = grads[k]
        if index is not None:
            num, ana = num.reshape(-1)[index], ana.reshape(-1)[index]
        worst = max(worst, float(np.max(relative_error(ana, num), initial=0.0)))
    return worst
