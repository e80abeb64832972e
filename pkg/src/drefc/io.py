"""Persistence: trajectory CSVs with a JSON manifest, models and mixtures as JSON."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .gmm import mixture_from_dict
from .koopman import DictionarySpec, KoopmanModel
from .sfr import Disturbance, SfrParams, Trajectory

MANIFEST = "manifest.json"


def save_dataset(dataset, out_dir, params: SfrParams, seed: int | None = None) -> Path:
    """One CSV per trajectory (time, freq_dev, injected_power, clean_freq_dev) + manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, tr in enumerate(dataset):
        name = f"traj_{i:04d}.csv"
        with (out / name).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "freq_dev", "injected_power", "clean_freq_dev"])
            for row in zip(tr.times, tr.freq_dev, tr.injected_power, tr.clean_freq_dev):
                w.writerow([repr(float(v)) for v in row])
        d = tr.disturbance
        entries.append({"file": name, "noise_seed": tr.noise_seed,
                        "onset_time": None if d is None else d.onset_time,
                        "power_deficit": None if d is None else d.power_deficit})
    manifest = {"params": asdict(params), "seed": seed, "trajectories": entries}
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_dataset(data_dir):
    """Inverse of :func:`save_dataset`; returns ``(trajectories, params)``."""
    root = Path(data_dir)
    manifest = json.loads((root / MANIFEST).read_text())
    out = []
    for e in manifest["trajectories"]:
        arr = np.loadtxt(root / e["file"], delimiter=",", skiprows=1, ndmin=2)
        dist = None if e["onset_time"] is None else Disturbance(e["onset_time"], e["power_deficit"])
        out.append(Trajectory(arr[:, 0], arr[:, 1], arr[:, 2], e["noise_seed"], arr[:, 3], dist))
    return out, SfrParams(**manifest["params"])


def model_to_dict(model: KoopmanModel) -> dict:
    return {"A": model.A.tolist(), "B": model.B.tolist(), "dictionary": asdict(model.dictionary),
            "training_residual": model.training_residual, "stride": model.stride, "dt": model.dt}


def model_from_dict(d: dict) -> KoopmanModel:
    spec = DictionarySpec(**{**d["dictionary"], "rbf_centers": tuple(d["dictionary"]["rbf_centers"])})
    return KoopmanModel(np.array(d["A"]), np.array(d["B"]), spec, d["training_residual"],
                        d["stride"], d["dt"])


def save_json(obj, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(obj, indent=1, default=_default))
    return p


def _default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def load_json(path):
    return json.loads(Path(path).read_text())


def save_model(model: KoopmanModel, path) -> Path:
    return save_json(model_to_dict(model), path)


def load_model(path) -> KoopmanModel:
    return model_from_dict(load_json(path))


def save_mixture(g, path) -> Path:
    return save_json(g.to_dict(), path)


def load_mixture(path):
    return mixture_from_dict(load_json(path))


def load_samples(path) -> np.ndarray:
    """Samples from CSV: one row per sample, optional non-numeric header line."""
    p = Path(path)
    first = p.read_text().splitlines()[0] if p.stat().st_size else ""
    skip = 0
    try:
        [float(v) for v in first.split(",")]
    except ValueError:
        skip = 1
    arr = np.loadtxt(p, delimiter=",", skiprows=skip, ndmin=2)
    return arr[:, 0] if arr.shape[1] == 1 else arr


def save_samples(x, path, header: str = "value") -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(x, dtype=float)
    np.savetxt(p, arr.reshape(len(arr), -1), delimiter=",", header=header, comments="",
               fmt="%.17g")
    return p
