"""On-disk formats: trajectory/dataset CSV with JSON sidecars, checkpoints, manifests."""

from __future__ import annotations

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .dataset import Dataset, ScalerParams
from .integrator import Trajectory
from .resnet import ParallelSurrogate, ResNetParams

FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    return FLOAT_FMT % x


def sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, files, extra=None):
    """Manifest of output files with their SHA-256 hashes."""
    path = Path(path)
    entries = {}
    for f in sorted(Path(p) for p in files):
        rel = f.relative_to(path.parent) if f.is_relative_to(path.parent) else f
        entries[str(rel)] = file_hash(f)
    manifest = {"created": datetime.now(timezone.utc).isoformat(), "files": entries}
    manifest.update(extra or {})
    write_json(path, manifest)
    return manifest


# --- trajectories ---------------------------------------------------------


def write_trajectory(path, traj: Trajectory):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *traj.channels])
        for t, row in zip(traj.times, traj.values):
            w.writerow([_fmt(t), *map(_fmt, row)])
    meta = dict(traj.metadata)
    meta.update({"sample_dt": traj.sample_dt, "channels": list(traj.channels), "n_points": len(traj)})
    write_json(sidecar(path), meta)
    return path


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "time":
        raise ValueError(f"{path}: trajectory header must start with 'time'")
    data = np.array([[float(x) for x in r] for r in body if r], dtype=float)
    meta = read_json(sidecar(path)) if sidecar(path).exists() else {}
    times = data[:, 0]
    dt = float(meta.get("sample_dt", times[1] - times[0]))
    meta.pop("channels", None)
    return Trajectory(times, data[:, 1:], header[1:], dt, meta)


# --- datasets -------------------------------------------------------------


def write_dataset(path, ds: Dataset):
    """Raw pairs as CSV; scalers, approach, dt and set descriptors in the sidecar."""
    path = Path(path)
    channels = list(ds.channels) or [f"c{i}" for i in range(ds.targets.shape[1])]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["set", "step", *(f"in_{c}" for c in channels), "in_dt", *(f"out_{c}" for c in channels)])
        for src, x, y in zip(ds.sources, ds.inputs, ds.targets):
            w.writerow([int(src[0]), int(src[1]), *map(_fmt, x), *map(_fmt, y)])
    write_json(
        sidecar(path),
        {
            "approach": ds.approach,
            "dt": ds.dt,
            "channels": channels,
            "input_scalers": [s.to_dict() for s in ds.input_scalers],
            "target_scalers": [s.to_dict() for s in ds.target_scalers],
            "sets": list(ds.sets),
        },
    )
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    meta = read_json(sidecar(path))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_in = len(meta["input_scalers"])
    return Dataset(
        data[:, 2 : 2 + n_in],
        data[:, 2 + n_in :],
        tuple(ScalerParams.from_dict(s) for s in meta["input_scalers"]),
        tuple(ScalerParams.from_dict(s) for s in meta["target_scalers"]),
        meta["approach"],
        float(meta["dt"]),
        data[:, :2].astype(int),
        tuple(meta.get("sets", ())),
        tuple(meta.get("channels", ())),
    )


# --- checkpoints ----------------------------------------------------------


def checkpoint_dict(surrogate: ParallelSurrogate, channel: int) -> dict:
    net = surrogate.networks[channel]
    out = net.to_dict()
    out.update(
        {
            "channel": channel,
            "channel_name": surrogate.channels[channel] if surrogate.channels else None,
            "n_channels": surrogate.n_channels,
            "approach": surrogate.approach,
            "dt": surrogate.dt,
            "input_scalers": [s.to_dict() for s in surrogate.input_scalers],
            "target_scaler": surrogate.target_scalers[channel].to_dict(),
        }
    )
    return out


def checkpoint_path(directory, channel) -> Path:
    return Path(directory) / f"channel_{channel:02d}.json"


def save_surrogate(directory, surrogate: ParallelSurrogate) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in range(surrogate.n_channels):
        p = checkpoint_path(directory, c)
        write_json(p, checkpoint_dict(surrogate, c))
        paths.append(p)
    return paths


def load_surrogate(directory) -> ParallelSurrogate:
    files = sorted(Path(directory).glob("channel_*.json"))
    if not files:
        raise FileNotFoundError(f"no channel checkpoints in {directory}")
    ckpts = sorted((read_json(f) for f in files), key=lambda d: d["channel"])
    if [d["channel"] for d in ckpts] != list(range(ckpts[0]["n_channels"])):
        raise ValueError(f"{directory}: incomplete set of channel checkpoints")
    first = ckpts[0]
    names = tuple(d["channel_name"] for d in ckpts) if first["channel_name"] is not None else ()
    return ParallelSurrogate(
        [ResNetParams.from_dict(d) for d in ckpts],
        tuple(ScalerParams.from_dict(s) for s in first["input_scalers"]),
        tuple(ScalerParams.from_dict(d["target_scaler"]) for d in ckpts),
        first["approach"],
        float(first["dt"]),
        names,
    )


def write_history(path, history):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "train_loss", "val_loss", "step", "grad_norm"])
        for i, f, v, s, g in history.rows():
            w.writerow([i, _fmt(f), _fmt(v), _fmt(s), _fmt(g)])


def write_channel_pairs(directory, pred: Trajectory, reference: Trajectory) -> list[Path]:
    """Plot-ready files, one per channel: ``time,reference,predicted``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, name in enumerate(reference.channels):
        p = directory / f"{name}.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "reference", "predicted"])
            for t, r, q in zip(reference.times, reference.values[:, i], pred.values[:, i]):
                w.writerow([_fmt(t), _fmt(r), _fmt(q)])
        paths.append(p)
    return paths
