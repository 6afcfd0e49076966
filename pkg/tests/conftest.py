import hashlib
import json
import os
from pathlib import Path

import pytest

import trackforge
from trackforge.assoc import TRACKER_PROXY

RESULTS: list[tuple[str, bool, str]] = []

# desk-scale training recipe for the acceptance suite
DESK = {
    "dataset": {"n_tracks": 2000, "seed": 0},
    "track_models": {"layers": 3, "hidden": 64, "epochs": 20, "seed": 0},
    "assoc": {"variants": ["bilstm", "lstm"], "epochs": 20, "episodes_per_epoch": 500, "batch_size": 8, "seed": 0,
              "episodes": TRACKER_PROXY},
}


def record(name: str, ok: bool, detail: str = "") -> None:
    RESULTS.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def _source_digest() -> str:
    h = hashlib.sha256(json.dumps(DESK, sort_keys=True).encode())
    root = Path(trackforge.__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _train(out: Path) -> None:
    from trackforge.assoc import AssocModelConfig, EpisodeConfig, train_assoc
    from trackforge.neural.serialize import save_weights
    from trackforge.sequence_training import train_track_model
    from trackforge.sim import DatasetConfig, generate_dataset
    from trackforge.training import Schedule

    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    d, t, a = DESK["dataset"], DESK["track_models"], DESK["assoc"]
    ds = generate_dataset(DatasetConfig(n_tracks=d["n_tracks"]), seed=d["seed"])
    for kind in ("pred-pos", "pred-vel", "filter"):
        model, c = train_track_model(kind, ds.train, ds.val, t["layers"], t["hidden"],
                                     Schedule(epochs=t["epochs"], seed=t["seed"]))
        save_weights(model, out / f"{kind.replace('-', '_')}.tfwt")
        curves[kind] = c
    for variant in a["variants"]:
        model, c = train_assoc(AssocModelConfig(variant), EpisodeConfig(**a["episodes"]),
                               Schedule(epochs=a["epochs"], batch_size=a["batch_size"], seed=a["seed"]),
                               a["episodes_per_epoch"])
        save_weights(model, out / ("assoc.tfwt" if variant == a["variants"][0] else f"assoc_{variant}.tfwt"))
        curves[f"assoc-{variant}"] = c
    (out / "curves.json").write_text(json.dumps(curves))


@pytest.fixture(scope="session")
def desk_models():
    """Directory of desk-trained weights plus their curves, trained once per source revision."""
    base = Path(os.environ.get("TRACKFORGE_ACCEPTANCE_CACHE", Path(__file__).parent.parent / ".acceptance_cache"))
    out = base / _source_digest()
    if not (out / "curves.json").exists():
        _train(out)
    return out


@pytest.fixture(scope="session")
def desk_dataset():
    from trackforge.sim import DatasetConfig, generate_dataset

    return generate_dataset(DatasetConfig(n_tracks=DESK["dataset"]["n_tracks"]), seed=DESK["dataset"]["seed"])
