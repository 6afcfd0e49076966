"""End-to-end learned tracker: gate, associate, manage, filter, predict."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assoc import build_assoc_input, decide_assignments, score_associations
from .errors import TrackforgeError
from .filtering import filter_batch
from .models import Carry, TrackNet
from .neural.network import AssocNet
from .neural.serialize import load_weights, save_weights
from .predictor import PredictorState, fresh_state, predict_batch
from .sim import spherical_to_cartesian
from .track_manager import BirthLogic, GateConfig, Track, gate_clusters, update_deaths

MODEL_FILES = {"assoc": "assoc.tfwt", "pred_pos": "pred_pos.tfwt", "pred_vel": "pred_vel.tfwt",
               "filter": "filter.tfwt"}


@dataclass
class LearnedModels:
    assoc: AssocNet
    pred_pos: TrackNet
    pred_vel: TrackNet
    filter: TrackNet

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for attr, name in MODEL_FILES.items():
            save_weights(getattr(self, attr), out / name)

    @classmethod
    def load(cls, model_dir: str | Path) -> "LearnedModels":
        d = Path(model_dir)
        return cls(**{attr: load_weights(d / name) for attr, name in MODEL_FILES.items()})


@dataclass
class TrackerConfig:
    gate: GateConfig = field(default_factory=GateConfig)
    # "measurement": the predictor consumes associated measurements; "filtered": filter output positions
    predictor_input: str = "measurement"

    def __post_init__(self):
        if isinstance(self.gate, dict):
            self.gate = GateConfig(**self.gate)
        if self.predictor_input not in ("measurement", "filtered"):
            raise ValueError("predictor_input must be 'measurement' or 'filtered'")


@dataclass
class LearnedTrackState:
    pred: PredictorState
    filt: Carry
    prediction: np.ndarray | None = None  # O^p for the next cycle, (6,)
    estimate: np.ndarray | None = None  # latest filtered position, (3,)


class CycleError(TrackforgeError):
    """A module failed inside a tracking cycle; the message names the step."""


class LearnedTracker:
    def __init__(self, models: LearnedModels, config: TrackerConfig = TrackerConfig()):
        self.models = models
        self.config = config
        self.tracks: list[Track] = []
        self.births = BirthLogic(config.gate)
        self.step_index = 0
        self.events: list[tuple] = []
        self.decisions: list[tuple] = []  # (step, track id, measurement index or None)

    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.alive]

    def step(self, meas: np.ndarray) -> dict[int, np.ndarray]:
        try:
            return self._step(np.asarray(meas, dtype=float).reshape(-1, 4))
        except TrackforgeError as exc:
            raise CycleError(f"tracking cycle {self.step_index}: {exc}") from exc

    def _step(self, meas: np.ndarray) -> dict[int, np.ndarray]:
        conv = spherical_to_cartesian(meas)
        live = self.confirmed()
        preds = np.array([t.state.prediction for t in live]).reshape(-1, 6)
        clusters, unlinked = gate_clusters(conv[:, :3], preds[:, :3], self.config.gate)
        assigned: dict[int, int] = {}
        free = set(unlinked)
        for cl in clusters:
            if not cl.measurements:
                continue
            feats = build_assoc_input(meas[cl.measurements], preds[cl.tracks])
            dec = decide_assignments(score_associations(feats, self.models.assoc))
            for local, t in enumerate(cl.tracks):
                j = dec.measurement_of(local)
                if j is not None:
                    assigned[t] = cl.measurements[j]
            free.update(cl.measurements[j] for j in dec.unassociated)
        for i, t in enumerate(live):
            self.decisions.append((self.step_index, t.id, assigned.get(i)))

        # track management
        for t in update_deaths(live, {t.id: i in assigned for i, t in enumerate(live)}, self.config.gate):
            self.events.append((self.step_index, "terminate", t.id, t.state.estimate.copy()))
        free_idx = sorted(free)
        promoted, events = self.births.update(conv[free_idx, :3], [meas[i] for i in free_idx])
        for ev, pid, pos in events:
            if ev == "seed":
                self.events.append((self.step_index, ev, pid, pos))

        # filter then predict for surviving tracks; a missed track coasts on its own prediction
        keep = [i for i, t in enumerate(live) if t.alive]
        obs = np.array([conv[assigned[i]] if i in assigned else live[i].state.prediction for i in keep])
        self._advance([live[i] for i in keep], obs.reshape(-1, 6))
        for pt in promoted:
            self._confirm(pt)
        self.step_index += 1
        return {t.id: t.state.estimate.copy() for t in self.confirmed()}

    def _advance(self, tracks: list[Track], obs: np.ndarray) -> None:
        if not tracks:
            return
        m = self.models
        est, carries = filter_batch(m.filter, [t.state.filt for t in tracks], obs)
        pin = obs.copy()
        if self.config.predictor_input == "filtered":
            pin[:, :3] = est
        pred, pstates = predict_batch(m.pred_pos, m.pred_vel, [t.state.pred for t in tracks], pin)
        for t, e, c, p, ps in zip(tracks, est, carries, pred, pstates):
            t.state.estimate, t.state.filt, t.state.prediction, t.state.pred = e, c, p, ps
            t.history.append(e.copy())

    def _confirm(self, pt) -> None:
        """Promote a probable track: zeroed recurrent states, warmed up on its measurement history."""
        m = self.models
        trk = Track(pt.id, state=LearnedTrackState(fresh_state(m.pred_pos, m.pred_vel), m.filter.zero_carry(1)),
                    born=self.step_index)
        for row in pt.history:
            self._advance([trk], spherical_to_cartesian(np.asarray(row))[None])
        trk.history = trk.history[-1:]
        self.tracks.append(trk)
        self.events.append((self.step_index, "promote", trk.id, trk.state.estimate.copy()))


def run_tracker_cycle(meas: np.ndarray, tracker) -> dict[int, np.ndarray]:
    """One cycle for either tracker; returns track id -> position estimate."""
    return tracker.step(meas)
