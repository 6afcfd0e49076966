"""Classical comparison tracker: EKF per motion model, IMM mixing and JPDA.

All motion models share one 10-dim Cartesian state so that IMM mixing is
well defined::

    [px, py, pz, vx, vy, vz, ax, ay, az, omega]

Components a model does not use are carried unchanged (with a small
process-noise floor so covariances stay positive definite).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import CombinatorialLimit, SingularInnovation
from .sim import NoiseParams, Volume, spherical_to_cartesian, wrap_angle
from .track_manager import BirthLogic, GateConfig, update_deaths

DIM = 10
MODELS = ("cv", "ct", "ca")
MAX_TRACKS = 8
MAX_MEAS = 12


@dataclass
class EkfState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class ProcessNoise:
    """White-noise intensities per model (tuned on the training envelope)."""

    cv: float = 4.0  # acceleration, m^2/s^3
    ct: float = 4.0
    ct_turn: float = 1e-4  # turn-rate random walk, rad^2/s^3
    ca: float = 2.0  # jerk, m^2/s^5
    floor: float = 1e-6


@dataclass
class ImmConfig:
    models: tuple = MODELS
    transition: np.ndarray = field(default_factory=lambda: np.array(
        [[0.90, 0.05, 0.05], [0.05, 0.90, 0.05], [0.05, 0.05, 0.90]]))
    initial_probs: np.ndarray = field(default_factory=lambda: np.array([1 / 3, 1 / 3, 1 / 3]))
    noise: ProcessNoise = field(default_factory=ProcessNoise)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.initial_probs = np.asarray(self.initial_probs, dtype=float)
        k = len(self.models)
        if self.transition.shape != (k, k) or not np.allclose(self.transition.sum(axis=1), 1.0):
            raise ValueError("transition matrix rows must be probability vectors")
        if len(self.initial_probs) != k or abs(self.initial_probs.sum() - 1.0) > 1e-9:
            raise ValueError("initial mode probabilities must sum to 1")


@dataclass
class JpdaConfig:
    p_d: float = 0.99
    clutter_density: float = 0.0  # measurement-space density, used when no per-measurement value is given
    gate_prob: float = 0.99

    def __post_init__(self):
        if not (0 < self.p_d <= 1) or self.clutter_density < 0:
            raise ValueError("need 0 < P_D <= 1 and clutter density >= 0")

    @property
    def gate_threshold(self) -> float:
        return float(chi2.ppf(self.gate_prob, df=4))


# ---------------------------------------------------------------------------
# EKF


def transition(model: str, x: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagate the mean and return the transition Jacobian."""
    F = np.eye(DIM)
    if model == "cv":
        F[0:3, 3:6] = dt * np.eye(3)
        return F @ x, F
    if model == "ca":
        F[0:3, 3:6] = dt * np.eye(3)
        F[0:3, 6:9] = 0.5 * dt * dt * np.eye(3)
        F[3:6, 6:9] = dt * np.eye(3)
        return F @ x, F
    if model != "ct":
        raise ValueError(f"unknown motion model {model!r}")
    vx, vy, w = x[3], x[4], x[9]
    wt = w * dt
    s, c = math.sin(wt), math.cos(wt)
    if abs(w) < 1e-6:
        a, b = dt, 0.5 * w * dt * dt
        da, db = -w * dt ** 3 / 3.0, 0.5 * dt * dt
    else:
        a, b = s / w, (1.0 - c) / w
        da = (dt * c * w - s) / (w * w)
        db = (dt * s * w - (1.0 - c)) / (w * w)
    out = x.copy()
    out[0] = x[0] + a * vx - b * vy
    out[1] = x[1] + b * vx + a * vy
    out[2] = x[2] + dt * x[5]
    out[3] = c * vx - s * vy
    out[4] = s * vx + c * vy
    F[0, 3], F[0, 4], F[0, 9] = a, -b, da * vx - db * vy
    F[1, 3], F[1, 4], F[1, 9] = b, a, db * vx + da * vy
    F[2, 5] = dt
    F[3, 3], F[3, 4], F[3, 9] = c, -s, -dt * s * vx - dt * c * vy
    F[4, 3], F[4, 4], F[4, 9] = s, c, dt * c * vx - dt * s * vy
    return out, F


def process_noise(model: str, dt: float, q: ProcessNoise) -> np.ndarray:
    Q = np.eye(DIM) * q.floor * dt
    if model in ("cv", "ct"):
        qa = q.cv if model == "cv" else q.ct
        blk = qa * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
        for i in range(3):
            Q[np.ix_([i, i + 3], [i, i + 3])] += blk
        if model == "ct":
            Q[9, 9] += q.ct_turn * dt
    else:
        blk = q.ca * np.array([[dt ** 5 / 20, dt ** 4 / 8, dt ** 3 / 6],
                               [dt ** 4 / 8, dt ** 3 / 3, dt ** 2 / 2],
                               [dt ** 3 / 6, dt ** 2 / 2, dt]])
        for i in range(3):
            Q[np.ix_([i, i + 3, i + 6], [i, i + 3, i + 6])] += blk
    return Q


def measurement_model(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free radar measurement of ``x`` and its Jacobian (4 x DIM)."""
    px, py, pz, vx, vy, vz = x[:6]
    rho2 = px * px + py * py
    rho = math.sqrt(rho2)
    r2 = rho2 + pz * pz
    r = math.sqrt(r2)
    if r < 1.0 or rho < 1e-9:
        raise SingularInnovation("state too close to the sensor axis for the measurement Jacobian")
    pv = px * vx + py * vy + pz * vz
    h = np.array([r, math.atan2(pz, rho), math.atan2(py, px), pv / r])
    H = np.zeros((4, DIM))
    H[0, 0:3] = [px / r, py / r, pz / r]
    H[1, 0:3] = [-pz * px / (r2 * rho), -pz * py / (r2 * rho), rho / r2]
    H[2, 0:2] = [-py / rho2, px / rho2]
    H[3, 0:3] = [vx / r - pv * px / r ** 3, vy / r - pv * py / r ** 3, vz / r - pv * pz / r ** 3]
    H[3, 3:6] = [px / r, py / r, pz / r]
    return h, H


def innovation(z: np.ndarray, zhat: np.ndarray) -> np.ndarray:
    nu = np.asarray(z, dtype=float) - zhat
    nu[..., 2] = wrap_angle(nu[..., 2])
    return nu


def measurement_cov(noise: NoiseParams) -> np.ndarray:
    return np.diag(noise.as_array() ** 2)


def ekf_predict(state: EkfState, model: str, dt: float, q: ProcessNoise = ProcessNoise()) -> EkfState:
    x, F = transition(model, state.mean, dt)
    P = F @ state.cov @ F.T + process_noise(model, dt, q)
    return EkfState(x, 0.5 * (P + P.T))


def _gauss_logpdf(nu: np.ndarray, S: np.ndarray, Sinv: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(S)
    return float(-0.5 * (nu @ Sinv @ nu + logdet + len(nu) * math.log(2 * math.pi)))


def predicted_measurement(state: EkfState, R: np.ndarray):
    zhat, H = measurement_model(state.mean)
    S = H @ state.cov @ H.T + R
    S = 0.5 * (S + S.T)
    if np.linalg.cond(S) > 1e14:
        raise SingularInnovation("innovation covariance is numerically singular")
    return zhat, H, S


def ekf_update(state: EkfState, z, R: np.ndarray) -> tuple[EkfState, float]:
    """Joseph-form EKF update; returns the posterior and the log-likelihood of ``z``."""
    zhat, H, S = predicted_measurement(state, R)
    Sinv = np.linalg.inv(S)
    nu = innovation(z, zhat)
    K = state.cov @ H.T @ Sinv
    A = np.eye(DIM) - K @ H
    P = A @ state.cov @ A.T + K @ R @ K.T
    return EkfState(state.mean + K @ nu, 0.5 * (P + P.T)), _gauss_logpdf(nu, S, Sinv)


def ekf_step(state: EkfState, model: str, z, noise: NoiseParams, dt: float,
             q: ProcessNoise = ProcessNoise()) -> EkfState:
    post, _ = ekf_update(ekf_predict(state, model, dt, q), z, measurement_cov(noise))
    return post


# ---------------------------------------------------------------------------
# IMM


@dataclass
class ImmState:
    modes: list
    probs: np.ndarray


def fuse(states: list[EkfState], probs: np.ndarray) -> EkfState:
    x = sum(p * s.mean for p, s in zip(probs, states))
    P = sum(p * (s.cov + np.outer(s.mean - x, s.mean - x)) for p, s in zip(probs, states))
    return EkfState(x, 0.5 * (P + P.T))


def imm_mix(imm: ImmState, config: ImmConfig) -> tuple[list[EkfState], np.ndarray]:
    """Mixed initial conditions per model and predicted mode probabilities."""
    T = config.transition
    c = imm.probs @ T
    mixed = []
    for j in range(len(config.models)):
        w = T[:, j] * imm.probs / c[j] if c[j] > 0 else np.full(len(imm.probs), 1 / len(imm.probs))
        mixed.append(fuse(imm.modes, w))
    return mixed, c


def _normalize_log(logw: np.ndarray, prior: np.ndarray) -> np.ndarray:
    lw = logw + np.log(np.maximum(prior, 1e-300))
    if not np.any(np.isfinite(lw)):
        return prior / prior.sum()
    lw = lw - np.max(lw)
    w = np.exp(lw)
    return w / w.sum()


def imm_step(imm: ImmState, config: ImmConfig, z, noise: NoiseParams, dt: float) -> tuple[EkfState, ImmState]:
    mixed, c = imm_mix(imm, config)
    R = measurement_cov(noise)
    modes, logl = [], []
    for m, s in zip(config.models, mixed):
        post, ll = ekf_update(ekf_predict(s, m, dt, config.noise), z, R)
        modes.append(post)
        logl.append(ll)
    probs = _normalize_log(np.array(logl), c)
    return fuse(modes, probs), ImmState(modes, probs)


def imm_predict(imm: ImmState, config: ImmConfig, dt: float) -> EkfState:
    """One-step-ahead fused prediction without a measurement."""
    mixed, c = imm_mix(imm, config)
    return fuse([ekf_predict(s, m, dt, config.noise) for m, s in zip(config.models, mixed)], c)


def init_from_positions(positions: np.ndarray, meas_row: np.ndarray, noise: NoiseParams, dt: float) -> EkfState:
    """Least-squares constant-velocity initialization from recent Cartesian positions."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    x = np.zeros(DIM)
    Rc = converted_cov(meas_row, noise)
    if n >= 2:
        t = np.arange(n) * dt
        A = np.stack([np.ones(n), t - t[-1]], axis=1)
        coef, *_ = np.linalg.lstsq(A, pos, rcond=None)
        x[0:3], x[3:6] = coef[0], coef[1]
        pp = Rc * (2 * (2 * n - 1)) / (n * (n + 1))
        vv = Rc * 12.0 / (n * (n * n - 1) * dt * dt)
        pv = Rc * 6.0 / (n * (n + 1) * dt)
    else:
        x[0:3] = pos[-1]
        pp, vv, pv = Rc, np.eye(3) * 300.0 ** 2, np.zeros((3, 3))
    P = np.zeros((DIM, DIM))
    P[0:3, 0:3], P[3:6, 3:6], P[0:3, 3:6], P[3:6, 0:3] = pp, vv, pv, pv.T
    P[6:9, 6:9] = np.eye(3) * 30.0 ** 2
    P[9, 9] = 0.05 ** 2
    P += np.eye(DIM) * 1e-6
    return EkfState(x, P)


def converted_cov(meas_row, noise: NoiseParams) -> np.ndarray:
    r, pp, pa = meas_row[0], meas_row[1], meas_row[2]
    J = np.array([
        [math.cos(pp) * math.cos(pa), -r * math.sin(pp) * math.cos(pa), -r * math.cos(pp) * math.sin(pa)],
        [math.cos(pp) * math.sin(pa), -r * math.sin(pp) * math.sin(pa), r * math.cos(pp) * math.cos(pa)],
        [math.sin(pp), r * math.cos(pp), 0.0],
    ])
    return J @ np.diag(noise.as_array()[:3] ** 2) @ J.T


# ---------------------------------------------------------------------------
# JPDA


def _gated_likelihoods(zhats, Ss, meas, gate):
    m, n = len(zhats), len(meas)
    L = np.zeros((m, n))
    valid = np.zeros((m, n), dtype=bool)
    for t in range(m):
        Sinv = np.linalg.inv(Ss[t])
        for j in range(n):
            nu = innovation(meas[j], zhats[t])
            d2 = float(nu @ Sinv @ nu)
            if d2 <= gate:
                valid[t, j] = True
                L[t, j] = math.exp(_gauss_logpdf(nu, Ss[t], Sinv))
    return L, valid


def jpda_probabilities(tracks, measurements, config: JpdaConfig = JpdaConfig(), densities=None) -> np.ndarray:
    """Association probabilities by exhaustive joint-event enumeration.

    ``tracks`` is a list of ``(zhat, S)`` predicted measurement densities.
    Returns ``beta`` of shape (tracks, measurements + 1); the last column is
    the probability that the track had no measurement. ``densities`` gives
    the clutter density at each measurement (defaults to the config value).
    """
    meas = np.asarray(measurements, dtype=float).reshape(-1, 4)
    m, n = len(tracks), len(meas)
    beta = np.zeros((m, n + 1))
    if m == 0:
        return beta
    if n == 0:
        beta[:, -1] = 1.0
        return beta
    zh = [np.asarray(t[0], dtype=float) for t in tracks]
    Ss = [np.asarray(t[1], dtype=float) for t in tracks]
    L, valid = _gated_likelihoods(zh, Ss, meas, config.gate_threshold)
    gated = np.flatnonzero(valid.any(axis=0))
    if m > MAX_TRACKS or len(gated) > MAX_MEAS:
        raise CombinatorialLimit(f"{m} tracks x {len(gated)} gated measurements exceeds exact enumeration")
    lam = np.full(n, config.clutter_density) if densities is None else np.asarray(densities, dtype=float)
    miss = 1.0 - config.p_d * config.gate_prob
    with np.errstate(divide="ignore"):
        log_hit = np.where(valid, np.log(config.p_d * L), -np.inf)
        log_lam = np.log(lam)
        log_miss = math.log(miss) if miss > 0 else -math.inf
    # measurements gated to no track are clutter in every event: a common factor, left out
    events: list[tuple[float, list[int]]] = []
    choice = [-1] * m

    def rec(t: int, used: set, acc: float):
        if t == m:
            acc += sum(log_lam[j] for j in gated if j not in used)
            events.append((acc, list(choice)))
            return
        choice[t] = -1
        rec(t + 1, used, acc + log_miss)
        for j in np.flatnonzero(valid[t]):
            if j in used:
                continue
            choice[t] = int(j)
            used.add(int(j))
            rec(t + 1, used, acc + log_hit[t, j])
            used.discard(int(j))
        choice[t] = -1

    rec(0, set(), 0.0)
    logw = np.array([e[0] for e in events])
    finite = np.isfinite(logw)
    if not finite.any():
        beta[:, -1] = 1.0
        return beta
    w = np.where(finite, np.exp(logw - logw[finite].max()), 0.0)
    w /= w.sum()
    for wt, ch in zip(w, events):
        for t, j in enumerate(ch[1]):
            beta[t, j if j >= 0 else n] += wt
    return beta


# ---------------------------------------------------------------------------
# full tracker


@dataclass
class BaselineTrack:
    id: int
    imm: ImmState
    status: str = "confirmed"
    miss_count: int = 0
    born: int = 0


def clutter_density_at(meas: np.ndarray, count: float, volume: Volume, v_max: float = 600.0) -> np.ndarray:
    """Clutter density in measurement space for points uniform in a Cartesian box."""
    meas = np.asarray(meas, dtype=float).reshape(-1, 4)
    if count <= 0:
        return np.zeros(len(meas))
    jac = meas[:, 0] ** 2 * np.cos(meas[:, 1])
    return count * jac / (volume.size * 2.0 * v_max)


class JpdaImmTracker:
    """JPDA association with per-track IMM filtering and the shared birth/death rules."""

    def __init__(self, noise: NoiseParams = NoiseParams(), dt: float = 5.0, imm: ImmConfig | None = None,
                 jpda: JpdaConfig = JpdaConfig(), gate: GateConfig = GateConfig(),
                 clutter_count: float = 0.0, volume: Volume | None = None):
        self.noise, self.dt = noise, dt
        self.imm = imm or ImmConfig()
        self.jpda, self.gate = jpda, gate
        self.clutter_count, self.volume = clutter_count, volume
        self.R = measurement_cov(noise)
        self.tracks: list[BaselineTrack] = []
        self.births = BirthLogic(gate)
        self.step_index = 0
        self.events: list[tuple] = []

    def _densities(self, meas):
        if self.volume is None or self.clutter_count <= 0:
            return np.full(len(meas), self.jpda.clutter_density)
        return clutter_density_at(meas, self.clutter_count, self.volume)

    def step(self, meas: np.ndarray) -> dict[int, np.ndarray]:
        """Process one frame of measurements (n, 4); returns id -> fused position."""
        meas = np.asarray(meas, dtype=float).reshape(-1, 4)
        live = [t for t in self.tracks if t.status == "confirmed"]
        preds = []
        for t in live:
            mixed, c = imm_mix(t.imm, self.imm)
            modes = [ekf_predict(s, m, self.dt, self.imm.noise) for m, s in zip(self.imm.models, mixed)]
            per = [predicted_measurement(s, self.R) for s in modes]
            zs = np.array([p[0] for p in per])
            ref = zs[0]
            zs = ref + innovation(zs, ref)
            zhat = c @ zs
            S = sum(ci * (p[2] + np.outer(z - zhat, z - zhat)) for ci, p, z in zip(c, per, zs))
            preds.append((modes, c, per, zhat, S))
        dens = self._densities(meas)
        L, valid = _gated_likelihoods([p[3] for p in preds], [p[4] for p in preds], meas,
                                      self.jpda.gate_threshold) if live and len(meas) else (
            np.zeros((len(live), len(meas))), np.zeros((len(live), len(meas)), bool))
        betas = self._cluster_betas(preds, meas, valid, dens)
        for i, (t, p, beta) in enumerate(zip(live, preds, betas)):
            self._update_track(t, p, meas, beta, valid[i] if len(meas) else np.zeros(0, bool), dens)
        associated = {t.id: bool(len(meas) and valid[i].any()) for i, t in enumerate(live)}
        for t in update_deaths(live, associated, self.gate):
            self.events.append((self.step_index, "terminate", t.id, fused_position(t)))
        free = np.flatnonzero(~valid.any(axis=0)) if live else np.arange(len(meas))
        pos = spherical_to_cartesian(meas[free])[:, :3] if len(free) else np.zeros((0, 3))
        promoted, events = self.births.update(pos, [meas[i] for i in free])
        for ev, pid, p in events:
            if ev == "seed":
                self.events.append((self.step_index, ev, pid, p))
        for pt in promoted:
            hist = np.array(pt.history)
            state = init_from_positions(spherical_to_cartesian(hist)[:, :3], hist[-1], self.noise, self.dt)
            k = len(self.imm.models)
            trk = BaselineTrack(pt.id, ImmState([EkfState(state.mean.copy(), state.cov.copy())
                                                        for _ in range(k)], self.imm.initial_probs.copy()),
                                born=self.step_index)
            self.tracks.append(trk)
            self.events.append((self.step_index, "promote", trk.id, state.mean[:3].copy()))
        self.step_index += 1
        return {t.id: fused_position(t) for t in self.tracks if t.status == "confirmed"}

    def _cluster_betas(self, preds, meas, valid, dens):
        m, n = len(preds), len(meas)
        betas = [np.r_[np.zeros(n), 1.0] for _ in range(m)]
        if m == 0 or n == 0:
            return betas
        # connected components of tracks sharing gated measurements
        parent = list(range(m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for j in range(n):
            ts = np.flatnonzero(valid[:, j])
            for a in ts[1:]:
                parent[find(int(a))] = find(int(ts[0]))
        groups: dict[int, list[int]] = {}
        for t in range(m):
            groups.setdefault(find(t), []).append(t)
        for ts in groups.values():
            js = np.flatnonzero(valid[ts].any(axis=0))
            if len(js) == 0:
                continue
            if len(js) > MAX_MEAS:
                # keep the best-scoring gated measurements for exact enumeration
                score = np.array([min(np.sum(innovation(meas[j], preds[t][3]) ** 2 /
                                             np.diag(preds[t][4])) for t in ts) for j in js])
                js = js[np.argsort(score, kind="stable")[:MAX_MEAS]]
            sub = [(preds[t][3], preds[t][4]) for t in ts]
            try:
                b = jpda_probabilities(sub, meas[js], self.jpda, dens[js])
            except CombinatorialLimit:
                b = np.stack([jpda_probabilities([s], meas[js], self.jpda, dens[js])[0] for s in sub])
            for row, t in zip(b, ts):
                full = np.zeros(n + 1)
                full[js] = row[:-1]
                full[-1] = row[-1]
                betas[t] = full
        return betas

    def _update_track(self, trk: BaselineTrack, pred, meas, beta, valid_row, dens):
        modes, c, per, _, _ = pred
        n = len(meas)
        idx = np.flatnonzero(beta[:n] > 0)
        new_modes, logl = [], []
        b0 = beta[-1]
        pg_miss = 1.0 - self.jpda.p_d * self.jpda.gate_prob
        for s, (zhat, H, S) in zip(modes, per):
            if len(idx) == 0:
                new_modes.append(s)
                logl.append(0.0)
                continue
            Sinv = np.linalg.inv(S)
            K = s.cov @ H.T @ Sinv
            nus = innovation(meas[idx], zhat)
            nu = beta[idx] @ nus
            A = np.eye(DIM) - K @ H
            Pc = A @ s.cov @ A.T + K @ self.R @ K.T
            spread = (nus * beta[idx, None]).T @ nus - np.outer(nu, nu)
            P = b0 * s.cov + (1.0 - b0) * Pc + K @ spread @ K.T
            new_modes.append(EkfState(s.mean + K @ nu, 0.5 * (P + P.T)))
            gated = np.flatnonzero(valid_row)
            lik = np.array([math.exp(_gauss_logpdf(innovation(meas[j], zhat), S, Sinv)) for j in gated])
            lam = dens[gated]
            if np.all(lam > 0):
                val = pg_miss + self.jpda.p_d * float(np.sum(lik / lam))
            else:
                val = self.jpda.p_d * float(np.sum(lik)) if len(gated) else 1.0
            logl.append(math.log(val) if val > 0 else -math.inf)
        trk.imm = ImmState(new_modes, _normalize_log(np.array(logl), c))


def fused_position(trk: BaselineTrack) -> np.ndarray:
    return fuse(trk.imm.modes, trk.imm.probs).mean[:3].copy()
