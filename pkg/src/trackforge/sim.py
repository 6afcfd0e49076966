"""Aircraft truth simulation and radar measurement model.

Truth uses a 3-DOF point-mass model with state ``[x, y, z, v, phi_p, phi_a]``
driven by the controls ``[phi_r, n_z, n_x]``. The sensor sits at the origin
and reports ``[r, phi_p_r, phi_a_r, v_r]`` with additive Gaussian noise.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGeometry, SingularState

G = 9.8
V_MIN = 1.0
PITCH_EPS = 1e-6
CLUTTER = -1


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


@dataclass(frozen=True)
class TargetState:
    x: float
    y: float
    z: float
    v: float
    phi_p: float
    phi_a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.v, self.phi_p, self.phi_a], dtype=float)

    @classmethod
    def from_array(cls, a) -> "TargetState":
        return cls(*(float(t) for t in a))


@dataclass(frozen=True)
class ControlInput:
    phi_r: float
    n_z: float
    n_x: float

    def as_array(self) -> np.ndarray:
        return np.array([self.phi_r, self.n_z, self.n_x], dtype=float)


@dataclass(frozen=True)
class NoiseParams:
    """Measurement noise standard deviations (not variances)."""

    sigma_d: float = 30.0
    sigma_phi_p: float = math.radians(0.5)
    sigma_phi_a: float = math.radians(0.5)
    sigma_v: float = 5.0

    def __post_init__(self):
        if min(self.sigma_d, self.sigma_phi_p, self.sigma_phi_a, self.sigma_v) <= 0:
            raise ValueError("noise standard deviations must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma_d, self.sigma_phi_p, self.sigma_phi_a, self.sigma_v])


@dataclass(frozen=True)
class Measurement:
    r: float
    phi_p_r: float
    phi_a_r: float
    v_r: float
    origin_tag: int = CLUTTER

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.phi_p_r, self.phi_a_r, self.v_r])


@dataclass(frozen=True)
class ControlBounds:
    v_min: float = 100.0
    v_max: float = 600.0
    n_x_min: float = -2.0
    n_x_max: float = 2.0
    n_z_min: float = -2.0
    n_z_max: float = 9.0
    # roll range is symmetric; pitch limit keeps clear of the azimuth-rate singularity
    roll_max: float = 1.2
    pitch_max: float = 0.5
    # soft altitude band: outside it, pitch may only turn back towards the band
    z_min: float = 1_000.0
    z_max: float = 15_000.0
    mean_hold: float = 5.0
    max_attempts: int = 20


@dataclass(frozen=True)
class InitialBox:
    lo: tuple = (-50_000.0, -50_000.0, 1_000.0)
    hi: tuple = (50_000.0, 50_000.0, 12_000.0)
    pitch_max: float = 0.3


@dataclass
class Trajectory:
    id: int
    dt: float
    states: np.ndarray  # (N, 6)
    controls: np.ndarray  # (N - 1, 3)

    def __len__(self):
        return len(self.states)


# ---------------------------------------------------------------------------
# dynamics


def _derivative(s: np.ndarray, u: np.ndarray) -> np.ndarray:
    v, pp, pa = s[..., 3], s[..., 4], s[..., 5]
    pr, nz, nx = u[..., 0], u[..., 1], u[..., 2]
    cp, sp = np.cos(pp), np.sin(pp)
    out = np.empty_like(s)
    out[..., 0] = v * cp * np.cos(pa)
    out[..., 1] = v * cp * np.sin(pa)
    out[..., 2] = v * sp
    out[..., 3] = G * (nx - sp)
    out[..., 4] = G / v * (nz * np.cos(pr) - cp)
    out[..., 5] = G / (v * cp) * nz * np.sin(pr)
    return out


def _check_regular(s: np.ndarray) -> None:
    s = np.atleast_2d(s)
    if np.any(s[:, 3] <= V_MIN) or np.any(np.abs(s[:, 4]) >= np.pi / 2 - PITCH_EPS):
        raise SingularState("speed at or below 1 m/s or pitch at the +-pi/2 singularity")


def rk4_step(s: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized RK4 step over arrays of shape (..., 6) and (..., 3)."""
    k1 = _derivative(s, u)
    k2 = _derivative(s + 0.5 * dt * k1, u)
    k3 = _derivative(s + 0.5 * dt * k2, u)
    k4 = _derivative(s + dt * k3, u)
    out = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[..., 5] = wrap_angle(out[..., 5])
    return out


def propagate_state(state: TargetState, control: ControlInput, dt: float) -> TargetState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = state.as_array()
    _check_regular(s)
    out = rk4_step(s, control.as_array(), dt)
    _check_regular(out)
    return TargetState.from_array(out)


def velocity_vector(states: np.ndarray) -> np.ndarray:
    """Cartesian velocity for state rows ``[x, y, z, v, phi_p, phi_a]``."""
    v, pp, pa = states[..., 3], states[..., 4], states[..., 5]
    return np.stack([v * np.cos(pp) * np.cos(pa), v * np.cos(pp) * np.sin(pa), v * np.sin(pp)], axis=-1)


def equilibrium_control(phi_p) -> np.ndarray:
    """Controls that hold speed and both angles constant."""
    phi_p = np.asarray(phi_p, dtype=float)
    return np.stack([np.zeros_like(phi_p), np.cos(phi_p), np.sin(phi_p)], axis=-1)


# ---------------------------------------------------------------------------
# truth generation


def _sample_initial(rng: np.random.Generator, box: InitialBox, bounds: ControlBounds) -> np.ndarray:
    pos = rng.uniform(box.lo, box.hi)
    v = rng.uniform(bounds.v_min, bounds.v_max)
    pp = rng.uniform(-box.pitch_max, box.pitch_max)
    pa = wrap_angle(rng.uniform(-np.pi, np.pi))
    return np.array([pos[0], pos[1], pos[2], v, pp, pa])


def _sample_control(rng: np.random.Generator, bounds: ControlBounds) -> tuple[np.ndarray, float]:
    u = np.array([
        rng.uniform(-bounds.roll_max, bounds.roll_max),
        rng.uniform(bounds.n_z_min, bounds.n_z_max),
        rng.uniform(bounds.n_x_min, bounds.n_x_max),
    ])
    return u, rng.exponential(bounds.mean_hold)


def _violates(prev: np.ndarray, s: np.ndarray, bounds: ControlBounds) -> np.ndarray:
    v, z, pp, pp0 = s[..., 3], s[..., 2], s[..., 4], prev[..., 4]
    return ((v < bounds.v_min) | (v > bounds.v_max) | (np.abs(pp) > bounds.pitch_max)
            | ((z > bounds.z_max) & (pp > 0) & (pp > pp0))
            | ((z < bounds.z_min) & (pp < 0) & (pp < pp0)))


def generate_truths(
    seeds: Sequence[int],
    duration: int,
    dt: float = 0.1,
    bounds: ControlBounds = ControlBounds(),
    box: InitialBox = InitialBox(),
    record_every: int = 1,
) -> list[Trajectory]:
    """Integrate one trajectory per seed in lock-step.

    Each track draws only from its own generator, so the result for a seed
    does not depend on which other seeds share the batch. Only every
    ``record_every``-th state is kept (controls are subsampled alike).
    """
    if duration < 1:
        raise ValueError("duration must be >= 1")
    rngs = [np.random.default_rng(s) for s in seeds]
    n = len(seeds)
    s = np.stack([_sample_initial(r, box, bounds) for r in rngs]) if n else np.zeros((0, 6))
    u = np.zeros((n, 3))
    hold = np.zeros(n)
    states = [s.copy()]
    controls = []
    for step in range(1, duration):
        for i in np.flatnonzero(hold <= 0.0):
            u[i], hold[i] = _sample_control(rngs[i], bounds)
        nxt = rk4_step(s, u, dt)
        bad = np.flatnonzero(_violates(s, nxt, bounds))
        for i in bad:
            for _ in range(bounds.max_attempts):
                u[i], hold[i] = _sample_control(rngs[i], bounds)
                cand = rk4_step(s[i], u[i], dt)
                if not _violates(s[i], cand, bounds):
                    break
            else:
                u[i] = equilibrium_control(s[i, 4])
                cand = rk4_step(s[i], u[i], dt)
            nxt[i] = cand
        hold -= dt
        if step % record_every == 0:
            controls.append(u.copy())
        s = nxt
        if step % record_every == 0:
            states.append(s.copy())
    st = np.stack(states, axis=1)
    ct = np.stack(controls, axis=1) if controls else np.zeros((n, 0, 3))
    return [Trajectory(id=int(seeds[i]), dt=dt * record_every, states=st[i], controls=ct[i]) for i in range(n)]


def generate_truth(seed: int, duration: int, dt: float = 0.1,
                   bounds: ControlBounds = ControlBounds(), box: InitialBox = InitialBox()) -> Trajectory:
    return generate_truths([seed], duration, dt, bounds, box)[0]


def simulate_controls(initial: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    """Integrate a fixed control schedule; returns states of length len(controls) + 1."""
    s = np.asarray(initial, dtype=float)
    out = [s.copy()]
    for u in controls:
        s = rk4_step(s, np.asarray(u, dtype=float), dt)
        out.append(s.copy())
    return np.stack(out, axis=-2)


# ---------------------------------------------------------------------------
# measurement model


def measure_array(pos: np.ndarray, vel: np.ndarray, noise: NoiseParams | None = None,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Vectorized measurement of Cartesian position/velocity rows -> (..., 4)."""
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    x, y, z = pos[..., 0], pos[..., 1], pos[..., 2]
    rho = np.hypot(x, y)
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r < 1.0):
        raise DegenerateGeometry("target within 1 m of the sensor")
    m = np.stack([r, np.arctan2(z, rho), np.arctan2(y, x), np.sum(vel * pos, axis=-1) / r], axis=-1)
    if noise is not None:
        if rng is None:
            raise ValueError("a generator is required when noise is requested")
        m = m + rng.standard_normal(m.shape) * noise.as_array()
        m[..., 0] = np.abs(m[..., 0])
        lim = np.pi / 2 - 1e-9
        m[..., 1] = np.clip(m[..., 1], -lim, lim)
        m[..., 2] = wrap_angle(m[..., 2])
    return m


def measure(state: TargetState, noise: NoiseParams | None, seed: int | None = None,
            origin_tag: int = CLUTTER) -> Measurement:
    s = state.as_array()
    rng = np.random.default_rng(seed) if noise is not None else None
    m = measure_array(s[:3], velocity_vector(s), noise, rng)
    return Measurement(*(float(t) for t in m), origin_tag=origin_tag)


def spherical_to_cartesian(m) -> np.ndarray:
    """Convert ``[r, phi_p, phi_a, v_r]`` row(s) into position and radial-velocity components."""
    a = m.as_array() if isinstance(m, Measurement) else np.asarray(m, dtype=float)
    r, pp, pa, vr = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    u = np.stack([np.cos(pp) * np.cos(pa), np.cos(pp) * np.sin(pa), np.sin(pp)], axis=-1)
    return np.concatenate([r[..., None] * u, vr[..., None] * u], axis=-1)


def radial_components(pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
    """Noise-free radial velocity projected on the line of sight."""
    r = np.linalg.norm(pos, axis=-1, keepdims=True)
    u = pos / r
    return np.sum(vel * u, axis=-1, keepdims=True) * u


@dataclass(frozen=True)
class Volume:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("volume must be non-empty")

    @property
    def size(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))


def generate_clutter_array(rng: np.random.Generator, count: int, volume: Volume,
                           v_max: float = 600.0) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return np.zeros((0, 4))
    pos = rng.uniform(volume.lo, volume.hi, size=(count, 3))
    m = measure_array(pos, np.zeros_like(pos))
    m[:, 3] = rng.uniform(-v_max, v_max, size=count)
    return m


def generate_clutter(seed: int, count: int, volume: Volume) -> list[Measurement]:
    rng = np.random.default_rng(seed)
    return [Measurement(*(float(t) for t in row), origin_tag=CLUTTER)
            for row in generate_clutter_array(rng, count, volume)]


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetConfig:
    n_tracks: int = 50_000
    n_samples: int = 100
    sample_interval: float = 5.0
    dt: float = 0.1
    train_fraction: float = 0.8
    noise: NoiseParams = field(default_factory=NoiseParams)
    bounds: ControlBounds = field(default_factory=ControlBounds)
    box: InitialBox = field(default_factory=InitialBox)
    chunk: int = 512

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        for key, typ in (("noise", NoiseParams), ("bounds", ControlBounds), ("box", InitialBox)):
            if key in d and isinstance(d[key], dict):
                sub = dict(d[key])
                if typ is InitialBox:
                    sub = {k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()}
                d[key] = typ(**sub)
        return cls(**d)


@dataclass
class TrackRecord:
    id: int
    dt_sample: float
    truth: np.ndarray  # (n, 6) position + Cartesian velocity
    meas: np.ndarray  # (n, 4)

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "dt_sample": self.dt_sample,
                           "truth": self.truth.tolist(), "meas": self.meas.tolist()})

    @classmethod
    def from_json(cls, line: str) -> "TrackRecord":
        d = json.loads(line)
        return cls(int(d["id"]), float(d["dt_sample"]), np.asarray(d["truth"], dtype=float),
                   np.asarray(d["meas"], dtype=float))


@dataclass
class Dataset:
    sample_interval: float
    train: list[TrackRecord]
    val: list[TrackRecord]


def track_seeds(seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(count)]


def simulate_records(seeds: Sequence[int], cfg: DatasetConfig) -> list[TrackRecord]:
    every = int(round(cfg.sample_interval / cfg.dt))
    duration = (cfg.n_samples - 1) * every + 1
    out = []
    for start in range(0, len(seeds), cfg.chunk):
        chunk = list(seeds[start:start + cfg.chunk])
        trajs = generate_truths(chunk, duration, cfg.dt, cfg.bounds, cfg.box, record_every=every)
        for sd, tr in zip(chunk, trajs):
            pos, vel = tr.states[:, :3], velocity_vector(tr.states)
            # measurement noise stream is separate from the control stream
            rng = np.random.default_rng([sd, 1])
            meas = measure_array(pos, vel, cfg.noise, rng)
            out.append(TrackRecord(tr.id, cfg.sample_interval, np.concatenate([pos, vel], axis=1), meas))
    return out


def generate_dataset(cfg: DatasetConfig, seed: int, out_dir: str | Path | None = None,
                     header: dict | None = None) -> Dataset:
    if cfg.n_tracks < 1:
        raise ValueError("track count must be >= 1")
    seeds = track_seeds(seed, cfg.n_tracks)
    records = simulate_records(seeds, cfg)
    for i, rec in enumerate(records):
        rec.id = i
    order = np.random.default_rng([seed, 2]).permutation(cfg.n_tracks)
    n_train = int(round(cfg.train_fraction * cfg.n_tracks))
    train_ids = sorted(int(i) for i in order[:n_train])
    val_ids = sorted(int(i) for i in order[n_train:])
    ds = Dataset(cfg.sample_interval, [records[i] for i in train_ids], [records[i] for i in val_ids])
    if out_dir is not None:
        write_dataset(ds, out_dir, {"seed": seed, "config": cfg.to_dict(),
                                    "split": {"train": train_ids, "val": val_ids}}, header)
    return ds


def write_dataset(ds: Dataset, out_dir: str | Path, manifest: dict, header: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, recs in (("train", ds.train), ("val", ds.val)):
        with open(out / f"{name}.jsonl", "w") as fh:
            if header is not None:
                fh.write(json.dumps({"header": header}) + "\n")
            for rec in recs:
                fh.write(rec.to_json() + "\n")
    body = dict(manifest)
    if header is not None:
        body = {"header": header, **body}
    (out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[TrackRecord]:
    recs = []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith('{"header"'):
                continue
            recs.append(TrackRecord.from_json(line))
    return recs


def load_dataset(path: str | Path) -> Dataset:
    p = Path(path)
    manifest = json.loads((p / "manifest.json").read_text())
    return Dataset(manifest["config"]["sample_interval"], read_records(p / "train.jsonl"),
                   read_records(p / "val.jsonl"))


def stack_records(records: Iterable[TrackRecord]) -> tuple[np.ndarray, np.ndarray]:
    recs = list(records)
    return np.stack([r.truth for r in recs]), np.stack([r.meas for r in recs])
