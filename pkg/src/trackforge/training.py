"""Mini-batch Adam training loop shared by every learned module."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError
from .neural.optim import AdamState, adam_step, clip_global_norm

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.clip <= 0:
            raise ConfigError(f"invalid training schedule {asdict(self)}")


def fit(params: dict, loss_and_grads: Callable[[np.ndarray], tuple[float, dict]], n_train: int,
        schedule: Schedule, evaluate: Callable[[], dict] | None = None) -> list[dict]:
    """Train ``params`` in place.

    ``loss_and_grads(idx)`` returns the mean loss and gradients over the
    training examples ``idx``. ``evaluate()`` runs after each epoch and its
    dict is merged into that epoch's curve row.
    """
    if n_train < 1:
        raise ConfigError("no training examples")
    rng = np.random.default_rng([schedule.seed, 7])
    opt = AdamState(lr=schedule.lr)
    curves = []
    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(n_train)
        total, count = 0.0, 0
        for start in range(0, n_train, schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            loss, grads = loss_and_grads(idx)
            clip_global_norm(grads, schedule.clip)
            adam_step(params, grads, opt)
            total += loss * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "train_loss": total / count}
        if evaluate is not None:
            row.update(evaluate())
        log.info("epoch %d %s", epoch, row)
        curves.append(row)
    return curves


def write_curves(curves: list[dict], path: str | Path, header_line: str | None = None) -> None:
    fields = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"]
    fields = [f for f in fields if any(f in r for r in curves)] + sorted(
        {k for r in curves for k in r} - set(fields))
    with open(path, "w", newline="") as fh:
        if header_line:
            fh.write(header_line + "\n")
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in curves:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
