"""Learned measurement-to-track association.

For each track the gated measurements form a sequence of absolute
differences against the track's prediction; the network scores every
measurement plus a NONE option and a greedy pass resolves cross-track
conflicts. Decisions use 0 for NONE and ``l`` (1-based) for measurement
``l - 1``, matching the score-matrix row layout.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol

import numpy as np

from .errors import CapacityExceeded, ConfigError, ShapeMismatch
from .metrics import assoc_accuracy
from .neural.losses import softmax_cross_entropy
from .neural.network import AssocNet
from .neural.optim import AdamState, adam_step, clip_global_norm
from .sim import NoiseParams, Volume, generate_clutter_array, measure_array, radial_components, spherical_to_cartesian
from .training import Schedule

log = logging.getLogger(__name__)

N_MAX = 10
NONE = 0
FEATURE_SCALES = np.array([1e4, 1e4, 1e4, 1e2, 1e2, 1e2])


@dataclass
class AssocModelConfig:
    variant: str = "bilstm"
    layers: int = 2
    hidden: int | None = None  # 128 for bilstm, 256 for lstm
    capacity: int = N_MAX

    def __post_init__(self):
        if self.variant not in ("bilstm", "lstm"):
            raise ConfigError(f"unknown association variant {self.variant!r}")
        if self.hidden is None:
            self.hidden = 128 if self.variant == "bilstm" else 256
        if self.hidden <= 0 or self.layers < 1 or self.capacity < 1:
            raise ConfigError("association model needs hidden > 0, layers >= 1, capacity >= 1")

    @property
    def architecture(self) -> str:
        return f"assoc-{self.variant}-{self.layers}x{self.hidden}"

    def build(self, seed: int = 0) -> AssocNet:
        return AssocNet(self.variant, self.layers, self.hidden, rng=np.random.default_rng([seed, 13]))


@dataclass
class AssocDecision:
    tracks: list  # per track: NONE or 1-based measurement index
    unassociated: list  # 0-based indices of measurements no track took

    def measurement_of(self, k: int) -> int | None:
        return None if self.tracks[k] == NONE else self.tracks[k] - 1


def _as_meas(measurements) -> np.ndarray:
    if len(measurements) and not isinstance(measurements, np.ndarray):
        measurements = np.array([m.as_array() if hasattr(m, "as_array") else m for m in measurements])
    return np.asarray(measurements, dtype=float).reshape(-1, 4)


def build_assoc_input(measurements, predictions, capacity: int = N_MAX, scales=FEATURE_SCALES) -> np.ndarray:
    """Features ``(m, n, 6)``: ``|converted M_l - O^p_k| / scales``."""
    meas = _as_meas(measurements)
    pred = np.asarray(predictions, dtype=float).reshape(-1, 6)
    if len(meas) > capacity:
        raise CapacityExceeded(f"{len(meas)} measurements exceed association capacity {capacity}")
    conv = spherical_to_cartesian(meas)
    return np.abs(conv[None, :, :] - pred[:, None, :]) / np.asarray(scales)


def score_associations(feats: np.ndarray, model: AssocNet) -> np.ndarray:
    """Score matrix ``(n + 1, m)``; column k is a softmax over NONE and the n measurements."""
    feats = np.asarray(feats, dtype=float)
    if feats.ndim != 3 or feats.shape[2] != model.input_dim:
        raise ShapeMismatch(f"expected (m, n, {model.input_dim}) features, got {feats.shape}")
    if feats.shape[0] == 0:
        return np.zeros((feats.shape[1] + 1, 0))
    return model.scores(feats).T


def decide_assignments(scores: np.ndarray) -> AssocDecision:
    """Per-track argmax with greedy conflict resolution.

    When several tracks claim one measurement the highest score keeps it
    (ties: lowest track index); the others fall back to their best remaining
    option. NONE never conflicts.
    """
    S = np.asarray(scores, dtype=float)
    n1, m = S.shape
    banned = np.zeros((n1, m), dtype=bool)
    while True:
        masked = np.where(banned, -np.inf, S)
        picks = np.argmax(masked, axis=0)  # first maximum: lowest row on ties
        changed = False
        for l in range(1, n1):
            claim = np.flatnonzero(picks == l)
            if len(claim) < 2:
                continue
            winner = claim[np.argmax(S[l, claim])]  # argmax returns the lowest index on ties
            for k in claim:
                if k != winner:
                    banned[l, k] = True
            changed = True
        if not changed:
            break
    used = set(int(p) for p in picks if p != NONE)
    return AssocDecision([int(p) for p in picks], [l - 1 for l in range(1, n1) if l not in used])


class IdAssociator(Protocol):
    """Interface for sensors that report a target identity (transponders).

    Association there is a table lookup, so an implementation returns the
    decision directly from reported ids. No implementation ships here.
    """

    def decide(self, track_ids: list[int], measurement_ids: list[int]) -> AssocDecision: ...


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeConfig:
    """Synthetic one-step scenes used to train and evaluate the association net."""

    max_tracks: int = 10
    capacity: int = N_MAX
    pos_err: float = 200.0  # prediction-error proxy, m
    vel_err: float = 20.0  # m/s
    # optional widening: a cross-range term (multiples of r * sigma_phi_a) and a per-target U(1, err_spread) scale
    range_err: float = 0.0
    err_spread: float = 1.0
    p_detect: float = 0.9
    max_clutter: int = 5
    spread_min: float = 500.0  # track spread half-width, log-uniform between these
    spread_max: float = 30e3
    clutter_margin: float = 15e3
    noise: NoiseParams = field(default_factory=NoiseParams)

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseParams(**self.noise)
        if not (0 <= self.max_tracks <= self.capacity and 0 < self.p_detect <= 1 and self.max_clutter >= 0
                and self.pos_err >= 0 and self.vel_err >= 0 and self.range_err >= 0 and self.err_spread >= 1):
            raise ConfigError(f"invalid episode config {asdict(self)}")

    def nominal(self) -> "EpisodeConfig":
        """Same scenes with the plain Gaussian proxy; accuracy figures are quoted on this."""
        return replace(self, range_err=0.0, err_spread=1.0)


# Proxy widening calibrated to the learned predictor inside the tracker: its position error follows the
# measurement's cross-range noise and it lags by up to a few times 20 m/s while the target manoeuvres.
TRACKER_PROXY = {"range_err": 1.0, "err_spread": 5.0}


@dataclass
class Episode:
    meas: np.ndarray  # (n, 4)
    preds: np.ndarray  # (m, 6)
    labels: np.ndarray  # (m,) NONE or 1-based index


def _random_kinematics(rng, m: int, center: np.ndarray, spread: float):
    pos = center + rng.uniform(-spread, spread, size=(m, 3))
    pos[:, 2] = np.maximum(pos[:, 2], 300.0)
    v = rng.uniform(100, 600, m)
    th = rng.uniform(-np.pi, np.pi, m)
    pp = rng.uniform(-0.3, 0.3, m)
    vel = np.stack([v * np.cos(pp) * np.cos(th), v * np.cos(pp) * np.sin(th), v * np.sin(pp)], axis=1)
    return pos, vel


def make_episode(rng, pos: np.ndarray, vel: np.ndarray, cfg: EpisodeConfig, n_clutter: int,
                 detected: np.ndarray | None = None) -> Episode:
    """Scene for targets at ``pos``/``vel``: noisy measurements, proxy predictions, labels."""
    m = len(pos)
    det = np.ones(m, bool) if detected is None else detected
    cross = cfg.range_err * np.linalg.norm(pos, axis=1) * (cfg.noise.sigma_phi_a if cfg.noise else 0.0)
    scale = rng.uniform(1.0, cfg.err_spread, (m, 1))
    std = np.hypot(cfg.pos_err, cross)[:, None] * scale
    preds = np.concatenate([pos + rng.normal(size=(m, 3)) * std,
                            radial_components(pos, vel) + rng.normal(size=(m, 3)) * cfg.vel_err * scale], axis=1)
    tm = measure_array(pos[det], vel[det], cfg.noise, rng)
    n_clutter = min(n_clutter, cfg.capacity - len(tm))
    if n_clutter > 0:
        vol = Volume(tuple(pos.min(axis=0) - cfg.clutter_margin), tuple(pos.max(axis=0) + cfg.clutter_margin))
        clutter = generate_clutter_array(rng, n_clutter, vol)
    else:
        clutter = np.zeros((0, 4))
    meas = np.concatenate([tm, clutter])
    order = rng.permutation(len(meas))
    where = np.empty(len(meas), dtype=int)
    where[order] = np.arange(len(meas))  # row i of the unshuffled list lands at where[i]
    labels = np.zeros(m, dtype=int)
    labels[np.flatnonzero(det)] = where[:len(tm)] + 1
    return Episode(meas[order], preds, labels)


def synthesize_episode(rng: np.random.Generator, cfg: EpisodeConfig = EpisodeConfig()) -> Episode:
    m = int(rng.integers(0, cfg.max_tracks + 1))
    rng_c = rng.uniform(20e3, 150e3)
    az = rng.uniform(-np.pi, np.pi)
    center = np.array([rng_c * np.cos(az), rng_c * np.sin(az), rng.uniform(1e3, 15e3)])
    spread = float(np.exp(rng.uniform(np.log(cfg.spread_min), np.log(cfg.spread_max))))
    if m == 0:
        pos, vel = np.zeros((0, 3)), np.zeros((0, 3))
        clutter = generate_clutter_array(rng, int(rng.integers(0, cfg.max_clutter + 1)),
                                         Volume(tuple(center - spread), tuple(center + spread)))
        return Episode(clutter, np.zeros((0, 6)), np.zeros(0, dtype=int))
    pos, vel = _random_kinematics(rng, m, center, spread)
    det = rng.random(m) < cfg.p_detect
    return make_episode(rng, pos, vel, cfg, int(rng.integers(0, cfg.max_clutter + 1)), det)


def separated_episode(rng: np.random.Generator, cfg: EpisodeConfig = EpisodeConfig(),
                      min_sep: float = 10e3) -> Episode:
    """Two detected targets at least ``min_sep`` apart, no clutter."""
    rng_c = rng.uniform(20e3, 150e3)
    az = rng.uniform(-np.pi, np.pi)
    center = np.array([rng_c * np.cos(az), rng_c * np.sin(az), rng.uniform(2e3, 12e3)])
    while True:
        pos, vel = _random_kinematics(rng, 2, center, 20e3)
        if np.linalg.norm(pos[0] - pos[1]) >= min_sep:
            return make_episode(rng, pos, vel, cfg, 0)


def episode_items(episodes: list[Episode]):
    """Group per-track training items by measurement count: n -> (features, labels)."""
    groups: dict[int, tuple[list, list]] = {}
    for ep in episodes:
        if len(ep.preds) == 0:
            continue
        f = build_assoc_input(ep.meas, ep.preds)
        g = groups.setdefault(len(ep.meas), ([], []))
        g[0].append(f)
        g[1].append(ep.labels)
    return {n: (np.concatenate(fs), np.concatenate(ls)) for n, (fs, ls) in groups.items()}


def batch_loss(model: AssocNet, episodes: list[Episode], grads: bool = True):
    """Mean cross-entropy over every track in ``episodes``; returns ``(loss, correct, count, grads)``."""
    items = episode_items(episodes)
    total = sum(len(l) for _, l in items.values())
    loss, correct, out = 0.0, 0, {}
    if total == 0:
        return 0.0, 0, 0, ({k: np.zeros_like(v) for k, v in model.params.items()} if grads else None)
    for n in sorted(items):
        f, lab = items[n]
        lg, cache = model.logits(f)
        l, d, s = softmax_cross_entropy(lg, lab)
        w = len(lab) / total
        loss += l * w
        correct += int(np.sum(np.argmax(s, axis=1) == lab))
        if grads:
            g = model.backward(d * w, cache)
            for k, v in g.items():
                out[k] = out[k] + v if k in out else v
    return loss, correct, total, (out if grads else None)


def evaluate(model: AssocNet, episodes: list[Episode]) -> tuple[float, float]:
    """Mean loss and decision accuracy (after conflict resolution) over ``episodes``."""
    loss, _, count, _ = batch_loss(model, episodes, grads=False)
    dec, lab = [], []
    for ep in episodes:
        if len(ep.preds) == 0:
            continue
        d = decide_assignments(score_associations(build_assoc_input(ep.meas, ep.preds), model))
        dec.extend(d.tracks)
        lab.extend(int(x) for x in ep.labels)
    return loss, assoc_accuracy(dec, lab)


def train_assoc(model_cfg: AssocModelConfig = AssocModelConfig(), episode_cfg: EpisodeConfig = EpisodeConfig(),
                schedule: Schedule = Schedule(batch_size=8), episodes_per_epoch: int = 500,
                val_episodes: int = 200) -> tuple[AssocNet, list[dict]]:
    """Adam training on freshly synthesized episodes every epoch.

    ``schedule.batch_size`` counts episodes. Curves hold per-epoch train
    loss/accuracy (running, per-track argmax) and validation loss/accuracy
    (decisions after conflict resolution).
    """
    if episodes_per_epoch < 1:
        raise ConfigError("episodes_per_epoch must be >= 1")
    model = model_cfg.build(schedule.seed)
    val_rng = np.random.default_rng([schedule.seed, 3])
    val = [synthesize_episode(val_rng, episode_cfg) for _ in range(val_episodes)]
    opt = AdamState(lr=schedule.lr)
    curves = []
    for epoch in range(1, schedule.epochs + 1):
        rng = np.random.default_rng([schedule.seed, 5, epoch])
        eps = [synthesize_episode(rng, episode_cfg) for _ in range(episodes_per_epoch)]
        tot_loss, tot_correct, tot_n = 0.0, 0, 0
        for s in range(0, len(eps), schedule.batch_size):
            loss, correct, count, g = batch_loss(model, eps[s:s + schedule.batch_size])
            if count == 0:
                continue
            clip_global_norm(g, schedule.clip)
            adam_step(model.params, g, opt)
            tot_loss += loss * count
            tot_correct += correct
            tot_n += count
        vl, va = evaluate(model, val)
        row = {"epoch": epoch, "train_loss": tot_loss / max(tot_n, 1), "val_loss": vl,
               "train_acc": tot_correct / max(tot_n, 1), "val_acc": va}
        log.info("assoc epoch %d %s", epoch, row)
        curves.append(row)
    return model, curves


# ---------------------------------------------------------------------------
# scenario-level evaluation


def crossing_accuracy(model: AssocNet, k: int, runs: int = 10, clutter: int = 5, seed: int = 0,
                      episode_cfg: EpisodeConfig = EpisodeConfig(), steps: int = 40) -> float:
    """Decision accuracy on the crossing-k scenario with proxy predictions.

    Every step forms one cluster of all targets plus local clutter, capped
    at the network capacity.
    """
    from .scenarios import ScenarioConfig, build_scenario

    dec, lab = [], []
    for r in range(runs):
        rng = np.random.default_rng([seed, 17, k, r])
        cfg = ScenarioConfig(name="crossing-k", k=k, seed=int(rng.integers(2 ** 31)), steps=steps,
                             clutter=0, noise=episode_cfg.noise)
        sc = build_scenario(cfg)
        n_cl = min(clutter, episode_cfg.capacity - k)
        for t in range(sc.steps):
            ep = make_episode(rng, sc.truth[t, :, :3], sc.truth[t, :, 3:], episode_cfg, n_cl)
            d = decide_assignments(score_associations(build_assoc_input(ep.meas, ep.preds), model))
            dec.extend(d.tracks)
            lab.extend(int(x) for x in ep.labels)
    return assoc_accuracy(dec, lab)


def separated_accuracy(model: AssocNet, scenes: int = 500, seed: int = 0,
                       episode_cfg: EpisodeConfig = EpisodeConfig()) -> float:
    rng = np.random.default_rng([seed, 19])
    eps = [separated_episode(rng, episode_cfg) for _ in range(scenes)]
    return evaluate(model, eps)[1]


def accuracy_vs_tracks(model: AssocNet, counts=range(1, 9), runs: int = 10, seed: int = 0,
                       episode_cfg: EpisodeConfig = EpisodeConfig()) -> list[tuple[int, float]]:
    return [(k, crossing_accuracy(model, k, runs, seed=seed, episode_cfg=episode_cfg)) for k in counts]
