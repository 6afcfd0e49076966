"""GOSPA with a track-switch penalty, assignment, and MSE curves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidParams, LengthMismatch


@dataclass(frozen=True)
class GospaParams:
    c: float = 7.0
    p: float = 2.0
    alpha: float = 2.0
    s: float = 3.0

    def __post_init__(self):
        if not (self.c > 0 and self.p >= 1 and 0 < self.alpha <= 2 and self.s >= 0):
            raise InvalidParams(f"invalid GOSPA parameters {self}")


@dataclass
class GospaBreakdown:
    """GOSPA distance and its p-th power components.

    ``total ** p == localization + missed + false + switch``. Pairs assigned
    beyond the cutoff contribute ``c ** p`` to ``localization``.
    """

    total: float
    localization: float
    missed: float
    false: float
    switch: float
    switches: int = 0
    assignment: dict = field(default_factory=dict)  # truth id -> estimate id


def assignment_solve(cost) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost one-to-one assignment of the smaller side of ``cost`` into the larger."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return [], 0.0
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    return pairs, float(cost[rows, cols].sum())


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(0, 3) if a.size == 0 else np.atleast_2d(a)


def gospa(estimates, truths, params: GospaParams = GospaParams(), previous: dict | None = None,
          estimate_ids=None, truth_ids=None) -> GospaBreakdown:
    """GOSPA between estimate set ``estimates`` and truth set ``truths``.

    ``previous`` is the truth-id -> estimate-id assignment from the previous
    step; a truth whose matched estimate id changed counts as one switch.
    Only pairs closer than ``c`` count as matched for switching purposes.
    """
    X, Y = _as_points(estimates), _as_points(truths)
    x_ids = list(range(len(X))) if estimate_ids is None else list(estimate_ids)
    y_ids = list(range(len(Y))) if truth_ids is None else list(truth_ids)
    c, p, alpha = params.c, params.p, params.alpha
    loc = 0.0
    assignment: dict = {}
    if len(X) and len(Y):
        d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
        cut = np.minimum(d, c) ** p
        pairs, loc = assignment_solve(cut)
        for i, j in pairs:
            if d[i, j] < c:
                assignment[y_ids[j]] = x_ids[i]
    missed = c ** p / alpha * max(len(Y) - len(X), 0)
    false = c ** p / alpha * max(len(X) - len(Y), 0)
    switches = 0
    if previous:
        switches = sum(1 for y, x in assignment.items() if y in previous and previous[y] != x)
    sw = params.s * switches
    total = (loc + missed + false + sw) ** (1.0 / p)
    return GospaBreakdown(total, loc, missed, false, sw, switches, assignment)


def mse_curve(estimates, truths) -> np.ndarray:
    """Per-step squared position error averaged over runs.

    ``estimates`` is (runs, steps, 3) or (steps, 3); ``truths`` matches it or
    is a single (steps, 3) reference shared by all runs.
    """
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    if e.ndim == 2:
        e = e[None]
    if t.ndim == 2 and t.shape == e.shape[1:]:
        t = np.broadcast_to(t, e.shape)
    if e.shape != t.shape:
        raise LengthMismatch(f"estimates {e.shape} vs truths {t.shape}")
    return np.mean(np.sum((e - t) ** 2, axis=-1), axis=0)


def assoc_accuracy(decisions, labels) -> float:
    """Fraction of tracks whose decided index equals the label (NONE is a class)."""
    d, l = list(decisions), list(labels)
    if len(d) != len(l):
        raise LengthMismatch(f"{len(d)} decisions vs {len(l)} labels")
    if not d:
        return 1.0
    return sum(a == b for a, b in zip(d, l)) / len(d)
