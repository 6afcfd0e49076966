"""Command-line entry point.

Each subcommand reads an optional JSON config (``--config``), takes a
master ``--seed`` and writes its artifacts under ``--out``. Exit status:
0 success, 2 usage error, 3 configuration error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, FormatError, TrackforgeError

EXIT_USAGE, EXIT_CONFIG, EXIT_IO = 2, 3, 4
CURVE_FIELDS = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"]
log = logging.getLogger("trackforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _build(cls, d: dict, what: str):
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what} config: {exc}") from None


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _full_config(args, cfg: dict) -> dict:
    return {"command": args.command, "seed": args.seed, "config": cfg}


def _schedule(cfg: dict, seed: int, **defaults):
    from .training import Schedule

    d = {**defaults, **cfg.get("schedule", {})}
    d.setdefault("seed", seed)
    return _build(Schedule, d, "schedule")


def _dataset(cfg: dict, seed: int):
    from .sim import DatasetConfig, generate_dataset, load_dataset

    src = cfg.get("dataset")
    if isinstance(src, str):
        try:
            return load_dataset(src)
        except (OSError, KeyError, ValueError) as exc:
            raise OSError(f"cannot load dataset {src}: {exc}") from None
    try:
        dcfg = DatasetConfig.from_dict(src or {"n_tracks": 2000})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset config: {exc}") from None
    return generate_dataset(dcfg, seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg: dict) -> None:
    from .harness import header, write_scenario
    from .scenarios import ScenarioConfig, build_scenario
    from .sim import DatasetConfig, generate_dataset

    out = _out(args)
    full = _full_config(args, cfg)
    if args.scenario or "scenario" in cfg:
        sc_cfg = dict(cfg.get("scenario", {}))
        if args.scenario:
            sc_cfg["name"] = args.scenario
        sc_cfg.setdefault("seed", args.seed)
        scfg = ScenarioConfig.from_dict(sc_cfg)
        write_scenario(build_scenario(scfg), out, full, args.seed)
        return
    try:
        dcfg = DatasetConfig.from_dict(cfg.get("dataset", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset config: {exc}") from None
    if dcfg.n_tracks < 1:
        raise ConfigError("dataset needs at least one track")
    generate_dataset(dcfg, args.seed, out, header(full))


def cmd_train_assoc(args, cfg: dict) -> None:
    from .assoc import (AssocModelConfig, EpisodeConfig, accuracy_vs_tracks, crossing_accuracy,
                        separated_accuracy, train_assoc)
    from .harness import write_csv, write_json
    from .neural.serialize import save_weights

    out = _out(args)
    full = _full_config(args, cfg)
    ep_cfg = _build(EpisodeConfig, cfg.get("episodes", {}), "episode")
    sched = _schedule(cfg, args.seed, batch_size=8)
    per_epoch = int(cfg.get("episodes_per_epoch", 500))
    runs = int(cfg.get("eval_runs", 10))
    variants = cfg.get("variants", [cfg.get("model", {}).get("variant", "bilstm")])
    eval_cfg = ep_cfg.nominal()
    report = {"variants": {}}
    for i, variant in enumerate(variants):
        mcfg = _build(AssocModelConfig, {**cfg.get("model", {}), **cfg.get(variant, {}), "variant": variant},
                      "association model")
        model, curves = train_assoc(mcfg, ep_cfg, sched, per_epoch)
        stem = "assoc" if i == 0 else f"assoc_{variant}"
        save_weights(model, out / f"{stem}.tfwt")
        write_csv(out / f"{stem}_curves.csv", CURVE_FIELDS, curves, full)
        vs = accuracy_vs_tracks(model, runs=runs, seed=args.seed, episode_cfg=eval_cfg)
        write_csv(out / f"{stem}_accuracy_vs_tracks.csv", ["tracks", "accuracy"],
                  [{"tracks": k, "accuracy": a} for k, a in vs], full)
        report["variants"][variant] = {
            "architecture": mcfg.architecture,
            "epoch1_train_loss": curves[0]["train_loss"], "final_train_loss": curves[-1]["train_loss"],
            "final_val_loss": curves[-1]["val_loss"], "final_val_acc": curves[-1]["val_acc"],
            "crossing2_clutter5_accuracy": crossing_accuracy(model, 2, runs=runs, seed=args.seed,
                                                             episode_cfg=eval_cfg),
            "separated_accuracy": separated_accuracy(model, seed=args.seed, episode_cfg=eval_cfg),
            "accuracy_vs_tracks": vs,
        }
    write_json(out / "assoc_report.json", report, full)


def _train_track(args, cfg: dict, kinds: list[str]) -> None:
    from .filtering import eval_filter_mse, learned_filter
    from .harness import MSE_FIELDS, mse_rows, write_csv, write_json
    from .neural.serialize import save_weights
    from .predictor import eval_prediction_mse, learned_predict
    from .sequence_training import position_mse, train_track_model

    out = _out(args)
    full = _full_config(args, cfg)
    ds = _dataset(cfg, args.seed)
    sched = _schedule(cfg, args.seed)
    layers = int(cfg.get("layers", 3))
    runs = int(cfg.get("eval_runs", 100))
    report = {}
    for kind in kinds:
        hidden = int(cfg.get("hidden", 256 if kind == "filter" else 512))
        model, curves = train_track_model(kind, ds.train, ds.val, layers, hidden, sched)
        stem = kind.replace("-", "_")
        save_weights(model, out / f"{stem}.tfwt")
        write_csv(out / f"{stem}_curves.csv", CURVE_FIELDS, curves, full)
        entry = {"architecture": model.architecture, "epoch1_val_loss": curves[0]["val_loss"],
                 "final_val_loss": curves[-1]["val_loss"], "final_train_loss": curves[-1]["train_loss"]}
        if kind != "pred-vel":
            m, ref = position_mse(model, ds.val, kind)
            entry.update({"heldout_mse": m, "reference_mse": ref})
            if runs > 0:
                res = (eval_filter_mse(learned_filter(model), runs, args.seed) if kind == "filter"
                       else eval_prediction_mse(learned_predict(model), runs, args.seed))
                write_csv(out / f"{stem}_mse.csv", MSE_FIELDS, mse_rows(res), full)
                entry.update({"segmented_mse_lstm": float(np.mean(res["mse_lstm"])),
                              "segmented_mse_imm": float(np.mean(res["mse_imm"]))})
        report[kind] = entry
    write_json(out / f"{'filter' if kinds == ['filter'] else 'predictor'}_report.json", report, full)


def cmd_train_pred(args, cfg: dict) -> None:
    target = cfg.get("target", "both")
    kinds = {"position": ["pred-pos"], "velocity": ["pred-vel"], "both": ["pred-pos", "pred-vel"]}.get(target)
    if kinds is None:
        raise ConfigError(f"target must be position, velocity or both, not {target!r}")
    _train_track(args, cfg, kinds)


def cmd_train_filter(args, cfg: dict) -> None:
    _train_track(args, cfg, ["filter"])


def _scenario_config(cfg: dict, args):
    from .scenarios import ScenarioConfig

    d = dict(cfg.get("scenario", {}))
    if getattr(args, "scenario", None):
        d["name"] = args.scenario
    d.setdefault("seed", args.seed)
    return ScenarioConfig.from_dict(d)


def cmd_track(args, cfg: dict) -> None:
    from .harness import (GOSPA_FIELDS, TRACK_LOG_FIELDS, aggregate_curve_rows, monte_carlo, write_csv,
                          write_json)
    from .metrics import GospaParams
    from .tracker import TrackerConfig

    out = _out(args)
    full = _full_config(args, {**cfg, "tracker": args.tracker})
    scfg = _scenario_config(cfg, args)
    model_dir = cfg.get("models")
    if args.tracker == "learned":
        if not model_dir:
            raise ConfigError("the learned tracker needs a 'models' directory in the config")
        from .tracker import MODEL_FILES
        for name in MODEL_FILES.values():
            if not (Path(model_dir) / name).exists():
                raise OSError(f"missing model file {Path(model_dir) / name}")
    params = _build(GospaParams, cfg.get("gospa", {}), "GOSPA")
    tcfg = _build(TrackerConfig, cfg.get("tracker", {}), "tracker")
    rep = monte_carlo(scfg, int(cfg.get("runs", 1)), args.seed, (args.tracker,), model_dir, params,
                      float(cfg.get("gospa_unit_m", 1000.0)), tcfg)
    entry = rep["trackers"][args.tracker]
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    for i, r in enumerate(entry["per_run"]):
        write_csv(runs_dir / f"run{i:03d}_tracks.csv", TRACK_LOG_FIELDS, r.pop("log"), full)
        write_csv(runs_dir / f"run{i:03d}_gospa.csv", GOSPA_FIELDS, r.pop("rows"), full)
    write_csv(out / f"gospa_{args.tracker}.csv", GOSPA_FIELDS, aggregate_curve_rows(entry), full)
    write_json(out / "report.json", rep, full)


def cmd_eval_gospa(args, cfg: dict) -> None:
    from .harness import GOSPA_FIELDS, gospa_rows, gospa_series, load_scenario, read_track_log, write_csv, write_json
    from .metrics import GospaParams

    out = _out(args)
    full = _full_config(args, cfg)
    truth_dir = args.truth or cfg.get("truth")
    logs = args.log or cfg.get("logs", [])
    if not truth_dir or not logs:
        raise ConfigError("eval-gospa needs a truth scenario directory and at least one track log")
    try:
        sc = load_scenario(truth_dir)
    except (OSError, KeyError, ValueError) as exc:
        raise OSError(f"cannot read truth scenario {truth_dir}: {exc}") from None
    params = _build(GospaParams, cfg.get("gospa", {}), "GOSPA")
    unit = float(cfg.get("gospa_unit_m", 1000.0))
    summary = {}
    for path in logs:
        try:
            est, _ = read_track_log(path)
        except OSError as exc:
            raise OSError(f"cannot read track log {path}: {exc.strerror or exc}") from None
        if len(est) != sc.steps:
            raise ConfigError(f"{path}: track log covers {len(est)} steps but the truth has {sc.steps}")
        series = gospa_series(est, sc.truth, params, unit)
        write_csv(out / f"gospa_{Path(path).stem}.csv", GOSPA_FIELDS, gospa_rows(series), full)
        summary[str(path)] = float(np.mean([g.total for g in series]))
    write_json(out / "gospa_summary.json", {"mean_gospa": summary}, full)


def cmd_bench(args, cfg: dict) -> None:
    """Time the main kernels; deterministic results go to the report, timings to timing.json."""
    from .assoc import AssocModelConfig, build_assoc_input, score_associations
    from .harness import config_hash, write_json
    from .metrics import gospa
    from .scenarios import build_scenario
    from .sim import DatasetConfig, simulate_records, track_seeds

    out = _out(args)
    full = _full_config(args, cfg)
    reps = int(cfg.get("repeats", 20))
    rng = np.random.default_rng(args.seed)
    results, timing = {}, {}

    def timed(name, fn):
        t0 = time.perf_counter()
        val = None
        for _ in range(reps):
            val = fn()
        timing[name] = (time.perf_counter() - t0) / reps
        results[name] = val

    X, Y = rng.normal(size=(6, 3)) * 5, rng.normal(size=(6, 3)) * 5
    timed("gospa_6x6", lambda: gospa(X, Y).total)
    model = AssocModelConfig(**cfg.get("assoc", {})).build(args.seed)
    meas = np.column_stack([rng.uniform(5e4, 1e5, 10), rng.uniform(-0.1, 0.1, 10), rng.uniform(-1, 1, 10),
                            rng.uniform(-300, 300, 10)])
    preds = rng.normal(size=(4, 6)) * 1e4
    timed("assoc_score_4x10", lambda: float(score_associations(build_assoc_input(meas, preds), model).sum()))
    timed("simulate_10_tracks", lambda: float(sum(r.meas.sum() for r in simulate_records(
        track_seeds(args.seed, 10), DatasetConfig(n_tracks=10)))))
    sc_cfg = _scenario_config(cfg, args)
    timed("build_scenario", lambda: float(sum(f[0].sum() for f in build_scenario(sc_cfg).frames)))
    write_json(out / "bench_report.json", {"repeats": reps, "results": results}, full)
    (out / "timing.json").write_text(json.dumps({"config_hash": config_hash(full), "seconds": timing},
                                                indent=2) + "\n")


COMMANDS = {
    "simulate": cmd_simulate, "train-assoc": cmd_train_assoc, "train-pred": cmd_train_pred,
    "train-filter": cmd_train_filter, "track": cmd_track, "eval-gospa": cmd_eval_gospa, "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trackforge", description="Learned multi-target tracking workbench")
    p.add_argument("--version", action="version", version=f"trackforge {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON configuration file")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", required=True, help="output directory")
        if name in ("simulate", "track", "bench"):
            s.add_argument("--scenario", help="named scenario (overrides the config)")
        if name == "track":
            s.add_argument("--tracker", choices=["learned", "jpda-imm"], required=True)
        if name == "eval-gospa":
            s.add_argument("--truth", help="scenario directory written by simulate")
            s.add_argument("--log", action="append", help="track-log CSV (repeatable)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, _load_config(args.config))
    except ConfigError as exc:
        print(f"trackforge: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"trackforge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrackforgeError as exc:
        print(f"trackforge: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
