"""Next-step prediction: stateful position and radial-velocity LSTMs per track."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baseline import EkfState, ImmConfig, ImmState, imm_predict, imm_step, init_from_positions
from .errors import ShapeMismatch
from .metrics import mse_curve
from .models import Carry, TrackNet, split_carry, stack_carries
from .sequence_training import train_track_model
from .sim import NoiseParams, TrackRecord, spherical_to_cartesian
from .training import Schedule


@dataclass
class PredictorState:
    pos: Carry
    vel: Carry


def fresh_state(pos_model: TrackNet, vel_model: TrackNet) -> PredictorState:
    return PredictorState(pos_model.zero_carry(1), vel_model.zero_carry(1))


def predict_batch(pos_model: TrackNet, vel_model: TrackNet, states: list[PredictorState],
                  obs: np.ndarray) -> tuple[np.ndarray, list[PredictorState]]:
    """Advance many tracks one step. ``obs`` is (B, 6); returns O^p (B, 6) and new states."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != 6 or len(obs) != len(states):
        raise ShapeMismatch(f"expected ({len(states)}, 6) observations, got {obs.shape}")
    if not states:
        return np.zeros((0, 6)), []
    p, pc = pos_model.step(obs, stack_carries([s.pos for s in states]))
    v, vc = vel_model.step(obs, stack_carries([s.vel for s in states]))
    n = len(states)
    return np.concatenate([p, v], axis=1), [PredictorState(a, b) for a, b in zip(split_carry(pc, n),
                                                                                 split_carry(vc, n))]


def predict_next(pos_model: TrackNet, vel_model: TrackNet, state: PredictorState,
                 obs: np.ndarray) -> tuple[np.ndarray, PredictorState]:
    out, new = predict_batch(pos_model, vel_model, [state], np.asarray(obs, dtype=float).reshape(1, 6))
    return out[0], new[0]


def train_predictor(train: list[TrackRecord], val: list[TrackRecord], target: str = "position",
                    layers: int = 3, hidden: int = 512, schedule: Schedule = Schedule()):
    kind = {"position": "pred-pos", "velocity": "pred-vel"}.get(target)
    if kind is None:
        raise ValueError(f"target must be 'position' or 'velocity', not {target!r}")
    return train_track_model(kind, train, val, layers, hidden, schedule)


# ---------------------------------------------------------------------------
# Monte Carlo evaluation on the segmented manoeuvre


def imm_outputs(meas: np.ndarray, dt: float, noise: NoiseParams, config: ImmConfig | None = None):
    """Run the IMM over one measurement sequence.

    Returns ``(filtered, predicted)`` positions (T, 3): the posterior at each
    step and the one-step prediction made after it.
    """
    config = config or ImmConfig()
    pos = spherical_to_cartesian(meas)[:, :3]
    T = len(meas)
    filt, pred = np.empty((T, 3)), np.empty((T, 3))
    init = init_from_positions(pos[:1], meas[0], noise, dt)
    imm = ImmState([EkfState(init.mean.copy(), init.cov.copy()) for _ in config.models], config.initial_probs.copy())
    filt[0] = pos[0]
    pred[0] = imm_predict(imm, config, dt).mean[:3]
    for k in range(1, T):
        fused, imm = imm_step(imm, config, meas[k], noise, dt)
        filt[k] = fused.mean[:3]
        pred[k] = imm_predict(imm, config, dt).mean[:3]
    return filt, pred


def _scenario_runs(runs: int, seed: int, noise: NoiseParams | None):
    from .scenarios import ScenarioConfig, build_scenario
    from .sim import track_seeds

    cfg = ScenarioConfig(name="segmented-maneuver", noise=noise)
    for s in track_seeds(seed, runs):
        sc = build_scenario(cfg, seed=s)
        meas = np.stack([f[0][0] for f in sc.frames])  # one target, no clutter
        yield sc, meas


def eval_prediction_mse(predict, runs: int = 100, seed: int = 0, noise: NoiseParams | None = NoiseParams(),
                        imm_config: ImmConfig | None = None) -> dict:
    """Per-step one-step-ahead position MSE on the segmented manoeuvre.

    ``predict(obs)`` maps a (T, 6) converted-measurement sequence to (T, 3)
    predictions of the next position. Entry ``k`` of each curve is the error
    of the prediction for step ``k`` made at step ``k - 1``; step 0 has no
    prediction and reports the raw measurement error.
    """
    est_l, est_i, truths = [], [], []
    for sc, meas in _scenario_runs(runs, seed, noise):
        obs = spherical_to_cartesian(meas)
        p = np.asarray(predict(obs))
        _, pi = imm_outputs(meas, sc.config.dt_sample, noise or NoiseParams(), imm_config)
        est_l.append(np.concatenate([obs[:1, :3], p[:-1]]))
        est_i.append(np.concatenate([obs[:1, :3], pi[:-1]]))
        truths.append(sc.truth[:, 0, :3])
    truths = np.stack(truths)
    return {"mse_lstm": mse_curve(np.stack(est_l), truths), "mse_imm": mse_curve(np.stack(est_i), truths),
            "segment_id": sc.segment_ids()}


def learned_predict(model: TrackNet):
    return lambda obs: model.run(obs[None])[0]


def persist_predict(obs: np.ndarray) -> np.ndarray:
    return np.asarray(obs)[:, :3]
