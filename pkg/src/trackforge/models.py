"""Per-track sequence models and the architecture-string registry.

A track model consumes the associated measurement stream converted to
Cartesian ``[x, y, z, vx, vy, vz]`` (position plus line-of-sight velocity
components). Each step is encoded as nine features::

    position / 1e5 m | increment since the previous measurement / 5e3 m | velocity / 600 m/s

and the network emits a scaled residual on top of a reference: the current
measurement, or for the position predictor its constant-velocity
extrapolation (current position plus the last increment). The reference
keeps the predictor sensible for speeds outside the training envelope.
Encoding and decoding are exact affine maps.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeMismatch
from .neural.network import AssocNet, RecurrentNet

POS_SCALE = 1e5
VEL_SCALE = 600.0
STEP_SCALE = 5e3
N_FEATURES = 9

# kind -> (slice of the observation the residual is added to, residual scale, extrapolate)
KINDS = {
    "pred-pos": (slice(0, 3), 1e3, True),
    "pred-vel": (slice(3, 6), 100.0, False),
    "filter": (slice(0, 3), 1e3, False),
}


def increments(obs: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
    """Position change since the previous observation, (B, T, 3).

    ``prev`` (B, 6) holds the observation preceding ``obs[:, 0]``; NaN rows
    (or ``prev=None``) mean the track has none and its increment is zero.
    """
    if obs.ndim != 3 or obs.shape[2] != 6:
        raise ShapeMismatch(f"expected (B, T, 6) observations, got {obs.shape}")
    pos = obs[..., :3]
    before = np.empty_like(pos)
    before[:, 1:] = pos[:, :-1]
    before[:, 0] = pos[:, 0]
    if prev is not None:
        known = ~np.isnan(prev[:, 0])
        before[known, 0] = prev[known, :3]
    return pos - before


def encode(obs: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
    """Features for observations ``(B, T, 6)``; see :func:`increments` for ``prev``."""
    inc = increments(obs, prev)
    return np.concatenate([obs[..., :3] / POS_SCALE, inc / STEP_SCALE, obs[..., 3:] / VEL_SCALE], axis=2)


@dataclass
class Carry:
    """Recurrent state a track carries between steps."""

    state: list
    prev: np.ndarray | None = None


class TrackNet:
    def __init__(self, kind: str, layers: int, hidden: int, rng: np.random.Generator | None = None):
        if kind not in KINDS:
            raise ValueError(f"unknown track model kind {kind!r}")
        self.kind = kind
        self.base, self.out_scale, self.extrapolate = KINDS[kind]
        self.rnn = RecurrentNet(N_FEATURES, hidden, layers, 3, rng=rng)
        self.params = self.rnn.params

    @property
    def architecture(self) -> str:
        return f"{self.kind}-{self.rnn.layers}x{self.rnn.hidden}"

    def reference(self, obs: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
        ref = obs[..., self.base]
        return ref + increments(obs, prev) if self.extrapolate else ref

    def target_residual(self, obs: np.ndarray, target: np.ndarray, prev=None) -> np.ndarray:
        return (target - self.reference(obs, prev)) / self.out_scale

    def decode(self, obs: np.ndarray, ys: np.ndarray, prev=None) -> np.ndarray:
        return self.reference(obs, prev) + ys * self.out_scale

    def run(self, obs: np.ndarray) -> np.ndarray:
        """Whole-sequence evaluation from a fresh state; returns decoded outputs."""
        ys, _, _ = self.rnn.forward(encode(obs))
        return self.decode(obs, ys)

    def zero_carry(self, batch: int) -> Carry:
        return Carry(self.rnn.zero_state(batch), None)

    def step(self, obs: np.ndarray, carry: Carry) -> tuple[np.ndarray, Carry]:
        """Advance one step for a batch of tracks; ``obs`` is (B, 6)."""
        o = obs[:, None, :]
        ys, state, _ = self.rnn.forward(encode(o, carry.prev), carry.state)
        return self.decode(o, ys, carry.prev)[:, 0], Carry(state, obs.copy())


_ARCH = re.compile(r"^(assoc-bilstm|assoc-lstm|pred-pos|pred-vel|filter)-(\d+)x(\d+)$")


def build_model(arch: str, rng: np.random.Generator | None = None):
    m = _ARCH.match(arch)
    if not m:
        raise FormatError(f"unknown architecture string {arch!r}")
    kind, layers, hidden = m.group(1), int(m.group(2)), int(m.group(3))
    if kind.startswith("assoc-"):
        return AssocNet(kind.split("-", 1)[1], layers, hidden, rng=rng)
    return TrackNet(kind, layers, hidden, rng=rng)


def stack_carries(carries: list[Carry]) -> Carry:
    layers = len(carries[0].state)
    state = [(np.concatenate([c.state[l][0] for c in carries]), np.concatenate([c.state[l][1] for c in carries]))
             for l in range(layers)]
    # fresh tracks have no previous observation; NaN rows mark them for encode()
    prev = np.concatenate([np.full((len(c.state[0][0]), 6), np.nan) if c.prev is None else c.prev
                           for c in carries])
    return Carry(state, prev)


def split_carry(carry: Carry, n: int) -> list[Carry]:
    return [Carry([(h[i:i + 1], c[i:i + 1]) for h, c in carry.state], carry.prev[i:i + 1]) for i in range(n)]
