"""Stateful LSTM filtering of each track's associated measurement stream."""
from __future__ import annotations

import numpy as np

from .baseline import ImmConfig
from .errors import ShapeMismatch
from .metrics import mse_curve
from .models import Carry, TrackNet, split_carry, stack_carries
from .predictor import _scenario_runs, imm_outputs
from .sequence_training import train_track_model
from .sim import NoiseParams, TrackRecord, spherical_to_cartesian
from .training import Schedule


def filter_batch(model: TrackNet, carries: list[Carry], obs: np.ndarray) -> tuple[np.ndarray, list[Carry]]:
    """One step for many tracks: ``obs`` (B, 6) -> filtered positions (B, 3)."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != 6 or len(obs) != len(carries):
        raise ShapeMismatch(f"expected ({len(carries)}, 6) observations, got {obs.shape}")
    if not carries:
        return np.zeros((0, 3)), []
    out, c = model.step(obs, stack_carries(carries))
    return out, split_carry(c, len(carries))


def filter_step(model: TrackNet, carry: Carry, obs: np.ndarray) -> tuple[np.ndarray, Carry]:
    out, c = filter_batch(model, [carry], np.asarray(obs, dtype=float).reshape(1, 6))
    return out[0], c[0]


def train_filter(train: list[TrackRecord], val: list[TrackRecord], layers: int = 3, hidden: int = 256,
                 schedule: Schedule = Schedule()):
    return train_track_model("filter", train, val, layers, hidden, schedule)


def eval_filter_mse(filt, runs: int = 100, seed: int = 0, noise: NoiseParams | None = NoiseParams(),
                    imm_config: ImmConfig | None = None) -> dict:
    """Per-step filtered-position MSE on the segmented manoeuvre.

    ``filt(obs)`` maps a (T, 6) converted-measurement sequence to (T, 3)
    position estimates.
    """
    est_l, est_i, truths = [], [], []
    for sc, meas in _scenario_runs(runs, seed, noise):
        obs = spherical_to_cartesian(meas)
        fi, _ = imm_outputs(meas, sc.config.dt_sample, noise or NoiseParams(), imm_config)
        est_l.append(np.asarray(filt(obs)))
        est_i.append(fi)
        truths.append(sc.truth[:, 0, :3])
    truths = np.stack(truths)
    return {"mse_lstm": mse_curve(np.stack(est_l), truths), "mse_imm": mse_curve(np.stack(est_i), truths),
            "segment_id": sc.segment_ids()}


def learned_filter(model: TrackNet):
    return lambda obs: model.run(obs[None])[0]


def identity_filter(obs: np.ndarray) -> np.ndarray:
    return np.asarray(obs)[:, :3]
