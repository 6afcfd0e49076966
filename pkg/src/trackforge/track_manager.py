"""Pre-association gating, probable-track birth and inactive-track termination."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class GateConfig:
    birth_gate_radius: float = 5_000.0
    birth_threshold: int = 5
    death_threshold: int = 3
    cluster_capacity: int = 10
    cluster_gate_factor: float = 3.0
    # a probable track not refreshed for this many consecutive steps is dropped
    probable_patience: int = 3

    def __post_init__(self):
        if min(self.birth_gate_radius, self.birth_threshold, self.death_threshold,
               self.cluster_capacity, self.cluster_gate_factor, self.probable_patience) <= 0:
            raise ValueError("gate configuration values must be positive")


@dataclass
class Cluster:
    tracks: list[int]
    measurements: list[int]


@dataclass
class ProbableTrack:
    id: int
    head: np.ndarray
    hits: int = 1
    history: list = field(default_factory=list)
    stale: int = 0


@dataclass
class Track:
    """A confirmed track. Model-specific state lives in ``state``."""

    id: int
    status: str = "confirmed"
    miss_count: int = 0
    state: object = None
    history: list = field(default_factory=list)
    born: int = 0

    @property
    def alive(self) -> bool:
        return self.status == "confirmed"


# ---------------------------------------------------------------------------
# clustering


def _kmeans(points: np.ndarray, k: int, iters: int = 50) -> np.ndarray:
    """Deterministic Lloyd iterations seeded with farthest-point initialization."""
    centers = [points[0]]
    for _ in range(1, k):
        d = np.min(np.linalg.norm(points[:, None] - np.array(centers)[None], axis=2), axis=1)
        centers.append(points[int(np.argmax(d))])
    centers = np.array(centers)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(iters):
        new = np.argmin(np.linalg.norm(points[:, None] - centers[None], axis=2), axis=1)
        if np.array_equal(new, labels) and _ > 0:
            break
        labels = new
        for j in range(k):
            if np.any(labels == j):
                centers[j] = points[labels == j].mean(axis=0)
    return labels


def _split(idx: np.ndarray, points: np.ndarray, cap: int) -> list[np.ndarray]:
    if len(idx) <= cap:
        return [idx]
    k = -(-len(idx) // cap)
    labels = _kmeans(points[idx], k)
    groups = [idx[labels == j] for j in range(k) if np.any(labels == j)]
    if len(groups) == 1:
        # co-located points: k-means cannot separate them, fall back to ordered halves
        half = len(idx) // 2
        groups = [idx[:half], idx[half:]]
    out = []
    for g in groups:
        out.extend(_split(g, points, cap))
    return out


def gate_clusters(meas_pos: np.ndarray, pred_pos: np.ndarray, config: GateConfig = GateConfig()):
    """Group measurements and tracks into association clusters.

    Returns ``(clusters, unlinked)`` where ``unlinked`` lists measurement
    indices near no track (routed to birth logic). Every track appears in
    exactly one cluster, possibly with no measurements.
    """
    meas_pos = np.asarray(meas_pos, dtype=float).reshape(-1, 3)
    pred_pos = np.asarray(pred_pos, dtype=float).reshape(-1, 3)
    n, m = len(meas_pos), len(pred_pos)
    if m == 0:
        return [], list(range(n))
    gate = config.cluster_gate_factor * config.birth_gate_radius
    link = np.linalg.norm(meas_pos[:, None] - pred_pos[None], axis=2) <= gate if n else np.zeros((0, m), bool)
    mi, ti = np.nonzero(link)
    graph = coo_matrix((np.ones(len(mi)), (mi, n + ti)), shape=(n + m, n + m))
    _, comp = connected_components(graph, directed=False)
    linked = link.any(axis=1)
    unlinked = [int(i) for i in range(n) if not linked[i]]
    clusters = []
    order = []
    for lab in dict.fromkeys(comp[n:]):  # components in order of first track
        order.append(lab)
    for lab in order:
        tracks = [int(t) for t in range(m) if comp[n + t] == lab]
        meas = np.array([i for i in range(n) if comp[i] == lab and linked[i]], dtype=int)
        if len(meas) <= config.cluster_capacity:
            clusters.append(Cluster(tracks, [int(i) for i in meas]))
            continue
        groups = _split(meas, meas_pos, config.cluster_capacity)
        owned: list[list[int]] = [[] for _ in groups]
        for t in tracks:
            best = min(range(len(groups)), key=lambda g: (
                np.min(np.linalg.norm(meas_pos[groups[g]] - pred_pos[t], axis=1)), g))
            owned[best].append(t)
        for g, ts in zip(groups, owned):
            clusters.append(Cluster(ts, sorted(int(i) for i in g)))
    return clusters, unlinked


# ---------------------------------------------------------------------------
# birth and death


class BirthLogic:
    """Maintains the probable-track list and promotes tracks after enough hits."""

    def __init__(self, config: GateConfig = GateConfig()):
        self.config = config
        self.probable: list[ProbableTrack] = []
        self._next = 0

    def update(self, meas_pos: np.ndarray, meas_rows=None):
        """Feed this step's unassociated measurement positions.

        ``meas_rows`` (optional) are stored in probable-track histories.
        Returns ``(promoted, events)`` with promoted probable tracks and
        ``(event, probable_id, position)`` tuples for seeding/promotion.
        """
        new, self.probable, events = update_births(meas_pos, self.probable, self.config, self._next, meas_rows)
        self._next += sum(1 for e in events if e[0] == "seed")
        return new, events


def update_births(meas_pos, probable: list[ProbableTrack], config: GateConfig = GateConfig(),
                  next_id: int = 0, meas_rows=None):
    """One birth-logic step.

    Each measurement joins the nearest probable track within the birth gate
    that has not yet been refreshed this step (ties: lowest id), otherwise it
    seeds a new probable track. Returns ``(promoted, probable, events)``.
    """
    meas_pos = np.asarray(meas_pos, dtype=float).reshape(-1, 3)
    rows = meas_rows if meas_rows is not None else list(meas_pos)
    refreshed: set[int] = set()
    events = []
    existing = list(probable)
    seeded = []
    for pos, row in zip(meas_pos, rows):
        best, best_d = None, None
        for pt in existing:
            if pt.id in refreshed:
                continue
            d = float(np.linalg.norm(pos - pt.head))
            if d <= config.birth_gate_radius and (best is None or d < best_d or (d == best_d and pt.id < best.id)):
                best, best_d = pt, d
        if best is not None:
            best.hits += 1
            best.head = pos.copy()
            best.history.append(row)
            best.stale = 0
            refreshed.add(best.id)
        else:
            pt = ProbableTrack(next_id, pos.copy(), 1, [row])
            next_id += 1
            seeded.append(pt)
            events.append(("seed", pt.id, pos.copy()))
    kept = []
    promoted = []
    for pt in existing:
        if pt.id not in refreshed:
            pt.stale += 1
            if pt.stale >= config.probable_patience:
                continue
        if pt.hits >= config.birth_threshold:
            promoted.append(pt)
            events.append(("promote", pt.id, pt.head.copy()))
            continue
        kept.append(pt)
    return promoted, kept + seeded, events


def update_deaths(tracks, associated, config: GateConfig = GateConfig()) -> list:
    """Advance miss counters; returns the tracks terminated this step.

    ``associated`` maps track id -> bool (True when a measurement was
    assigned this step).
    """
    terminated = []
    for t in tracks:
        if t.status != "confirmed":
            continue
        if associated.get(t.id, False):
            t.miss_count = 0
        else:
            t.miss_count += 1
            if t.miss_count > config.death_threshold:
                t.status = "terminated"
                terminated.append(t)
    return terminated
