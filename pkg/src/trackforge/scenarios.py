"""Named evaluation scenarios: truth programs, measurement frames and clutter.

A scenario is a set of targets, each flying a list of constant-control
segments. Every segment holds the pitch angle it starts with (``n_z`` and
``n_x`` are solved for that) and applies a roll angle and a tangential
acceleration. Truth is integrated at 0.1 s and sampled every ``dt_sample``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .sim import CLUTTER, G, NoiseParams, Volume, generate_clutter_array, measure_array, rk4_step, velocity_vector

NAMES = ("crossing-k", "segmented-maneuver", "integrated-4track", "custom")


@dataclass
class Segment:
    steps: int
    roll: float = 0.0
    accel: float = 0.0  # tangential acceleration, m/s^2


@dataclass
class TargetProgram:
    initial: np.ndarray  # [x, y, z, v, phi_p, phi_a]
    segments: list


@dataclass
class ScenarioConfig:
    name: str = "integrated-4track"
    k: int = 4  # target count for crossing-k
    clutter: int | None = None  # per step; None picks the named default
    clutter_region: str | None = None  # "scene" (whole truth volume) or "local" (box around the targets)
    noise: NoiseParams = field(default_factory=NoiseParams)
    steps: int | None = None
    dt_sample: float = 5.0
    dt: float = 0.1
    p_detect: float = 1.0
    speed: float | None = None
    seed: int = 0
    targets: list | None = None  # custom: [{"initial": [...], "segments": [{"steps", "roll", "accel"}]}]

    def __post_init__(self):
        if self.name not in NAMES:
            raise ConfigError(f"unknown scenario {self.name!r}; expected one of {NAMES}")
        if self.name == "crossing-k" and not 1 <= self.k <= 10:
            raise ConfigError("crossing-k needs 1 <= k <= 10")
        if not 0 < self.p_detect <= 1 or self.dt <= 0 or self.dt_sample <= 0:
            raise ConfigError("invalid detection probability or time step")
        if self.clutter is not None and self.clutter < 0:
            raise ConfigError("clutter count must be >= 0")
        if self.clutter_region not in (None, "scene", "local"):
            raise ConfigError("clutter_region must be 'scene' or 'local'")
        if self.name == "custom" and not self.targets:
            raise ConfigError("custom scenario needs a targets list")
        if isinstance(self.noise, dict):
            self.noise = NoiseParams(**self.noise)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = None if self.noise is None else asdict(self.noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad scenario config: {exc}") from None


@dataclass
class Scenario:
    config: ScenarioConfig
    states: np.ndarray  # (steps, targets, 6) kinematic [x, y, z, v, phi_p, phi_a]
    truth: np.ndarray  # (steps, targets, 6) Cartesian [x, y, z, vx, vy, vz]
    frames: list  # per step: (measurements (n, 4), origin tags (n,))
    boundaries: list  # step indices where a new segment starts
    volume: Volume | None

    @property
    def steps(self) -> int:
        return len(self.truth)

    def segment_ids(self) -> np.ndarray:
        return np.searchsorted(np.asarray(self.boundaries), np.arange(self.steps), side="right")


def segment_control(state: np.ndarray, seg: Segment) -> np.ndarray:
    """Controls that hold the current pitch while rolling and accelerating as requested."""
    pp = state[4]
    return np.array([seg.roll, math.cos(pp) / math.cos(seg.roll), math.sin(pp) + seg.accel / G])


def fly(programs: list[TargetProgram], dt_sample: float, dt: float) -> tuple[np.ndarray, list[int]]:
    """Sample each program every ``dt_sample``; returns states (steps, targets, 6) and segment starts."""
    sub = int(round(dt_sample / dt))
    if abs(sub * dt - dt_sample) > 1e-9:
        raise ConfigError("dt_sample must be a whole number of integration steps")
    lengths = {sum(s.steps for s in p.segments) for p in programs}
    if len(lengths) != 1:
        raise ConfigError("all targets must fly the same number of steps")
    out = np.empty((lengths.pop(), len(programs), 6))
    for j, prog in enumerate(programs):
        s = np.asarray(prog.initial, dtype=float)
        k = 0
        for seg in prog.segments:
            u = segment_control(s, seg)
            for _ in range(seg.steps):
                out[k, j] = s
                for _ in range(sub):
                    s = rk4_step(s, u, dt)
                k += 1
    starts = list(np.cumsum([0] + [s.steps for s in programs[0].segments])[:-1]) if programs else [0]
    return out, [int(b) for b in starts]


def _converging(headings, speed: float, pitch: float, meet: np.ndarray, meet_time: float) -> list[np.ndarray]:
    init = []
    for th in headings:
        d = np.array([math.cos(pitch) * math.cos(th), math.cos(pitch) * math.sin(th), math.sin(pitch)])
        p = meet - speed * meet_time * d
        init.append(np.array([p[0], p[1], p[2], speed, pitch, math.atan2(math.sin(th), math.cos(th))]))
    return init


def programs_for(cfg: ScenarioConfig) -> list[TargetProgram]:
    ts = cfg.dt_sample
    if cfg.name == "integrated-4track":
        # climb at 0.17 rad, coordinated turn at 0.26 rad roll, then 10 m/s^2; paths meet at step 40
        speed = cfg.speed or 400.0
        heads = [math.pi / 4 + j * math.pi / 2 for j in range(4)]
        meet = np.array([100e3, 0.0, 2e3 + speed * 40 * ts * math.sin(0.17)])
        segs = [Segment(40), Segment(15, roll=0.26), Segment(40, accel=10.0)]
        return [TargetProgram(s, segs) for s in _converging(heads, speed, 0.17, meet, 40 * ts)]
    if cfg.name == "crossing-k":
        steps = cfg.steps or 40
        speed = cfg.speed or 300.0
        th0 = np.random.default_rng([cfg.seed, 0]).uniform(0, 2 * math.pi)
        heads = [th0 + 2 * math.pi * j / cfg.k for j in range(cfg.k)]
        meet = np.array([80e3, 0.0, 8e3])
        return [TargetProgram(s, [Segment(steps)])
                for s in _converging(heads, speed, 0.0, meet, (steps // 2) * ts)]
    if cfg.name == "segmented-maneuver":
        init = np.array([60e3, -20e3, 8e3, cfg.speed or 250.0, 0.0, math.pi / 2])
        segs = [Segment(50), Segment(20, roll=0.26), Segment(35, accel=8.0), Segment(35, accel=-8.0),
                Segment(50, roll=0.3, accel=5.0)]
        return [TargetProgram(init, segs)]
    progs = []
    for t in cfg.targets:
        try:
            progs.append(TargetProgram(np.asarray(t["initial"], dtype=float),
                                       [Segment(**s) for s in t["segments"]]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad custom target: {exc}") from None
    return progs


NAMED_CLUTTER = {"integrated-4track": (50, "scene"), "crossing-k": (5, "local"),
                 "segmented-maneuver": (0, "scene"), "custom": (0, "scene")}


def scene_volume(truth: np.ndarray, margin: float = 10e3) -> Volume:
    pos = truth[..., :3].reshape(-1, 3)
    lo, hi = pos.min(axis=0) - margin, pos.max(axis=0) + margin
    lo[2] = max(lo[2], 0.0)
    return Volume(tuple(lo), tuple(hi))


def local_volume(points: np.ndarray, margin: float = 15e3) -> Volume:
    """Bounding box of ``points`` grown by the coarse cluster gate."""
    return Volume(tuple(points.min(axis=0) - margin), tuple(points.max(axis=0) + margin))


def build_scenario(cfg: ScenarioConfig, seed: int | None = None) -> Scenario:
    """Truth plus shuffled measurement frames. ``seed`` overrides ``cfg.seed`` for noise draws."""
    seed = cfg.seed if seed is None else seed
    states, bounds = fly(programs_for(cfg), cfg.dt_sample, cfg.dt)
    if cfg.steps is not None and cfg.name != "crossing-k":
        states = states[:cfg.steps]
    truth = np.concatenate([states[..., :3], velocity_vector(states)], axis=-1)
    count, region = NAMED_CLUTTER[cfg.name]
    count = count if cfg.clutter is None else cfg.clutter
    region = cfg.clutter_region or region
    volume = scene_volume(truth) if count and region == "scene" else None
    rng = np.random.default_rng([seed, 1])
    frames = []
    for k in range(len(truth)):
        det = rng.random(truth.shape[1]) < cfg.p_detect
        m = measure_array(truth[k, det, :3], truth[k, det, 3:], cfg.noise, rng)
        vol = volume if region == "scene" else local_volume(truth[k, :, :3])
        c = generate_clutter_array(rng, count, vol) if count else np.zeros((0, 4))
        meas = np.concatenate([m, c])
        tags = np.concatenate([np.flatnonzero(det), np.full(len(c), CLUTTER)])
        order = rng.permutation(len(meas))
        frames.append((meas[order], tags[order]))
    return Scenario(cfg, states, truth, frames, bounds, volume)
