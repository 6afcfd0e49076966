"""Scenario orchestration, Monte Carlo evaluation and report files.

Every text output starts with a header naming the tool version and a hash
of the configuration that produced it: a ``#`` comment line for CSV, a
``{"header": ...}`` first record for JSON Lines and a leading ``header``
key for JSON documents.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .metrics import GospaParams, gospa
from .scenarios import Scenario, ScenarioConfig, build_scenario
from .sim import Volume, track_seeds

TOOL = "trackforge"


# ---------------------------------------------------------------------------
# headers and files


def _plain(o):
    if is_dataclass(o):
        return asdict(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def canonical(cfg) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_plain)


def config_hash(cfg) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def header(cfg) -> dict:
    return {"tool": TOOL, "version": __version__, "config_hash": config_hash(cfg)}


def header_line(cfg) -> str:
    h = header(cfg)
    return f"# {h['tool']} {h['version']} config={h['config_hash']}"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path: str | Path, fields: list[str], rows, cfg) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header_line(cfg) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r.get(f, "")) for f in fields])


def read_csv(path: str | Path) -> tuple[str | None, list[dict]]:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    head = lines[0] if lines and lines[0].startswith("#") else None
    body = [l for l in lines if not l.startswith("#")]
    return head, list(csv.DictReader(body))


def write_json(path: str | Path, obj: dict, cfg) -> None:
    body = {"header": header(cfg), **obj}
    Path(path).write_text(json.dumps(body, indent=2, default=_plain) + "\n")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def thread_count() -> int:
    """Worker cap from ``TRACKFORGE_THREADS`` (default 1)."""
    raw = os.environ.get("TRACKFORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TRACKFORGE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("TRACKFORGE_THREADS must be >= 1")
    return n


# ---------------------------------------------------------------------------
# scenario files


def write_scenario(sc: Scenario, out_dir: str | Path, cfg, seed: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "frames.jsonl", "w") as fh:
        fh.write(json.dumps({"header": header(cfg)}) + "\n")
        for k, (meas, tags) in enumerate(sc.frames):
            fh.write(json.dumps({"step": k, "meas": meas.tolist(), "tags": tags.tolist(),
                                 "truth": sc.truth[k].tolist()}) + "\n")
    manifest = {"seed": seed, "scenario": sc.config.to_dict(), "boundaries": sc.boundaries,
                "volume": None if sc.volume is None else {"lo": list(sc.volume.lo), "hi": list(sc.volume.hi)}}
    write_json(out / "manifest.json", manifest, cfg)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    man = read_json(p / "manifest.json")
    frames, truth = [], []
    with open(p / "frames.jsonl") as fh:
        for line in fh:
            d = json.loads(line)
            if "header" in d:
                continue
            frames.append((np.asarray(d["meas"], dtype=float).reshape(-1, 4), np.asarray(d["tags"], dtype=int)))
            truth.append(d["truth"])
    vol = man.get("volume")
    volume = None if vol is None else Volume(tuple(vol["lo"]), tuple(vol["hi"]))
    cfg = ScenarioConfig.from_dict(man["scenario"])
    truth = np.asarray(truth, dtype=float)
    return Scenario(cfg, np.full(truth.shape, np.nan), truth, frames, man["boundaries"], volume)


# ---------------------------------------------------------------------------
# tracking runs


@dataclass
class TrackerRun:
    estimates: list  # per step: {track id: position}
    events: list  # (step, event, id, position)
    decisions: list = field(default_factory=list)


def make_tracker(kind: str, scenario: Scenario, models=None, tracker_cfg=None):
    from .baseline import JpdaImmTracker
    from .tracker import LearnedTracker, TrackerConfig

    cfg = scenario.config
    if kind == "learned":
        if models is None:
            raise ConfigError("the learned tracker needs trained models")
        return LearnedTracker(models, tracker_cfg or TrackerConfig())
    if kind == "jpda-imm":
        count = len(scenario.frames[0][0]) - int(np.sum(scenario.frames[0][1] >= 0)) if scenario.frames else 0
        gate = (tracker_cfg.gate if tracker_cfg is not None else None)
        kw = {"gate": gate} if gate is not None else {}
        return JpdaImmTracker(noise=cfg.noise, dt=cfg.dt_sample, clutter_count=count, volume=scenario.volume, **kw)
    raise ConfigError(f"unknown tracker {kind!r}; expected 'learned' or 'jpda-imm'")


def run_tracker(tracker, scenario: Scenario) -> TrackerRun:
    est = [dict(tracker.step(meas)) for meas, _ in scenario.frames]
    return TrackerRun(est, list(tracker.events), list(getattr(tracker, "decisions", [])))


def track_log_rows(run: TrackerRun) -> list[dict]:
    """Track-log rows: lifecycle events plus one ``estimate`` row per live track and step."""
    rows = []
    ev_by_step: dict[int, list] = {}
    for e in run.events:
        ev_by_step.setdefault(e[0], []).append(e)
    for k, est in enumerate(run.estimates):
        for step, ev, tid, pos in ev_by_step.get(k, []):
            rows.append({"step": step, "event": ev, "track_id": tid, "position": np.asarray(pos)})
        for tid in sorted(est):
            rows.append({"step": k, "event": "estimate", "track_id": tid, "position": np.asarray(est[tid])})
    return rows


TRACK_LOG_FIELDS = ["step", "event", "track_id", "position"]
GOSPA_FIELDS = ["step", "total", "loc", "missed", "false", "switches"]
MSE_FIELDS = ["step", "mse_lstm", "mse_imm", "segment_id"]


def read_track_log(path: str | Path) -> tuple[list[dict], list[tuple]]:
    """Estimates per step and lifecycle events from a track-log CSV."""
    _, rows = read_csv(path)
    try:
        steps = max((int(r["step"]) for r in rows), default=-1) + 1
        est: list[dict] = [{} for _ in range(steps)]
        events = []
        for r in rows:
            pos = np.array([float(x) for x in r["position"].split()])
            if r["event"] == "estimate":
                est[int(r["step"])][int(r["track_id"])] = pos
            else:
                events.append((int(r["step"]), r["event"], int(r["track_id"]), pos))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed track log ({exc})") from None
    return est, events


def gospa_series(estimates: list[dict], truth: np.ndarray, params: GospaParams = GospaParams(),
                 unit: float = 1000.0) -> list:
    """GOSPA per step with switch tracking; positions are divided by ``unit`` (default km)."""
    out, prev = [], None
    for k, est in enumerate(estimates):
        ids = sorted(est)
        X = np.array([est[i] for i in ids]).reshape(-1, 3) / unit
        Y = truth[k, :, :3] / unit
        g = gospa(X, Y, params, prev, ids, list(range(len(Y))))
        prev = g.assignment
        out.append(g)
    return out


def gospa_rows(series) -> list[dict]:
    return [{"step": k, "total": g.total, "loc": g.localization, "missed": g.missed, "false": g.false,
             "switches": g.switches} for k, g in enumerate(series)]


def lifecycle_stats(run: TrackerRun, steps: int) -> dict:
    """Confirmed-track count and the fraction of post-confirmation steps each track stayed alive."""
    born = {e[2]: e[0] for e in run.events if e[1] == "promote"}
    alive_steps = total = 0
    for tid, b in born.items():
        post = [k for k in range(b, steps)]
        total += len(post)
        alive_steps += sum(1 for k in post if tid in run.estimates[k])
    return {"confirmed": len(born), "alive_fraction": alive_steps / total if total else 0.0}


def learned_assoc_accuracy(run: TrackerRun, scenario: Scenario) -> float | None:
    """Share of learned-tracker decisions matching the track's majority truth origin."""
    origin: dict[int, list] = {}
    for step, tid, j in run.decisions:
        if j is not None:
            origin.setdefault(tid, []).append(int(scenario.frames[step][1][j]))
    owner = {t: max(set(v), key=lambda x: (v.count(x), -x)) for t, v in origin.items()}
    good = n = 0
    for step, tid, j in run.decisions:
        if tid not in owner:
            continue
        tags = scenario.frames[step][1]
        label = np.flatnonzero(tags == owner[tid])
        want = int(label[0]) if len(label) else None
        good += int(want == j)
        n += 1
    return good / n if n else None


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class McJob:
    kind: str
    config: ScenarioConfig
    seed: int
    model_dir: str | None
    gospa: GospaParams
    unit: float
    tracker_cfg: object = None


def _run_job(job: McJob) -> dict:
    from .tracker import LearnedModels

    sc = build_scenario(job.config, seed=job.seed)
    models = LearnedModels.load(job.model_dir) if job.kind == "learned" else None
    run = run_tracker(make_tracker(job.kind, sc, models, job.tracker_cfg), sc)
    series = gospa_series(run.estimates, sc.truth, job.gospa, job.unit)
    out = {"seed": job.seed, "gospa": [g.total for g in series], "rows": gospa_rows(series),
           "log": track_log_rows(run), **lifecycle_stats(run, sc.steps)}
    if job.kind == "learned":
        out["assoc_accuracy"] = learned_assoc_accuracy(run, sc)
    return out


def _map(fn, jobs):
    workers = min(thread_count(), len(jobs)) if jobs else 1
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))  # map keeps job order, so aggregation is reproducible


def monte_carlo(config: ScenarioConfig, runs: int, seed: int, trackers=("learned", "jpda-imm"),
                model_dir: str | None = None, params: GospaParams = GospaParams(), unit: float = 1000.0,
                tracker_cfg=None) -> dict:
    """Run every tracker on ``runs`` scenario draws with seeds derived from ``seed``."""
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    seeds = track_seeds(seed, runs)
    report = {"scenario": config.to_dict(), "runs": runs, "seed": seed, "seeds": seeds,
              "gospa_params": asdict(params), "gospa_unit_m": unit, "trackers": {}}
    for kind in trackers:
        res = _map(_run_job, [McJob(kind, config, s, model_dir, params, unit, tracker_cfg) for s in seeds])
        curves = np.array([r["gospa"] for r in res])
        comp = {f: np.mean([[row[f] for row in r["rows"]] for r in res], axis=0) for f in GOSPA_FIELDS[1:]}
        entry = {
            "mean_gospa": float(curves.mean()),
            "gospa_curve": curves.mean(axis=0),
            "components": comp,
            "confirmed": [r["confirmed"] for r in res],
            "alive_fraction": [r["alive_fraction"] for r in res],
            "per_run": res,
        }
        if kind == "learned":
            entry["assoc_accuracy"] = [r["assoc_accuracy"] for r in res]
        report["trackers"][kind] = entry
    return report


def aggregate_curve_rows(entry: dict) -> list[dict]:
    comp = entry["components"]
    return [{"step": k, "total": entry["gospa_curve"][k], "loc": comp["loc"][k], "missed": comp["missed"][k],
             "false": comp["false"][k], "switches": comp["switches"][k]} for k in range(len(entry["gospa_curve"]))]


def mse_rows(result: dict) -> list[dict]:
    return [{"step": k, "mse_lstm": result["mse_lstm"][k], "mse_imm": result["mse_imm"][k],
             "segment_id": int(result["segment_id"][k])} for k in range(len(result["mse_lstm"]))]


def average_runs(curves) -> np.ndarray:
    """Mean of per-run curves; identical to :func:`metrics.mse_curve` pooling for aligned runs."""
    return np.mean(np.asarray(curves, dtype=float), axis=0)

