"""Training and evaluation helpers for the per-track predictor and filter nets."""
from __future__ import annotations

import numpy as np

from .models import TrackNet, encode
from .neural.losses import mse_loss
from .sim import TrackRecord, radial_components, spherical_to_cartesian, stack_records
from .training import Schedule, fit


def sequence_arrays(records: list[TrackRecord], kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Observations (N, T, 6) and matching targets (N, T, 3) for a model kind."""
    truth, meas = stack_records(records)
    obs = spherical_to_cartesian(meas)
    if kind == "filter":
        return obs, truth[..., :3]
    nxt = truth[:, 1:]
    if kind == "pred-pos":
        return obs[:, :-1], nxt[..., :3]
    if kind == "pred-vel":
        return obs[:, :-1], radial_components(nxt[..., :3], nxt[..., 3:])
    raise ValueError(f"unknown kind {kind!r}")


def batch_loss(model: TrackNet, obs: np.ndarray, target: np.ndarray, grads: bool = True):
    ys, _, cache = model.rnn.forward(encode(obs))
    loss, d = mse_loss(ys, model.target_residual(obs, target))
    if not grads:
        return loss, None
    g, _ = model.rnn.backward(d, cache)
    return loss, g


def eval_loss(model: TrackNet, obs: np.ndarray, target: np.ndarray, batch: int = 256) -> float:
    tot = 0.0
    for s in range(0, len(obs), batch):
        loss, _ = batch_loss(model, obs[s:s + batch], target[s:s + batch], grads=False)
        tot += loss * len(obs[s:s + batch])
    return tot / len(obs)


def train_track_model(kind: str, train: list[TrackRecord], val: list[TrackRecord], layers: int,
                      hidden: int, schedule: Schedule) -> tuple[TrackNet, list[dict]]:
    model = TrackNet(kind, layers, hidden, rng=np.random.default_rng([schedule.seed, 11]))
    obs, tgt = sequence_arrays(train, kind)
    vobs, vtgt = sequence_arrays(val, kind) if val else (None, None)

    def step(idx):
        return batch_loss(model, obs[idx], tgt[idx])

    def evaluate():
        return {"val_loss": eval_loss(model, vobs, vtgt)} if vobs is not None else {}

    curves = fit(model.params, step, len(obs), schedule, evaluate)
    return model, curves


def position_mse(model: TrackNet, records: list[TrackRecord], kind: str, skip: int = 0) -> tuple[float, float]:
    """Mean squared position error (m^2) of the model and of the reference.

    The reference is the raw measurement for the filter and the persisted
    last measurement for the position predictor.
    """
    obs, tgt = sequence_arrays(records, kind)
    out = np.concatenate([model.run(obs[s:s + 256]) for s in range(0, len(obs), 256)])
    err = np.sum((out - tgt) ** 2, axis=-1)[:, skip:]
    ref = np.sum((obs[..., :3] - tgt) ** 2, axis=-1)[:, skip:]
    return float(err.mean()), float(ref.mean())
