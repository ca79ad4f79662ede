"""Command-line driver: ``stiffnet {mech-validate,generate,train,rollout,eval}``.

Every command reads one JSON config (``--config``) with dotted ``--set``
overrides, writes into ``--out`` and exits nonzero when any declared output
could not be produced.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from . import mechanism as mech
from .dataset import PairSet, balance_by_replication, classify_fuel, split_validation
from .errors import ConfigurationError, StiffnetError
from .integrator import IntegratorConfig, integrate
from .rollout import evaluate_rollout, march, trajectory_error
from .trainer import TrainConfig, train_parallel, worker_count

log = logging.getLogger("stiffnet")

DEFAULTS = {
    "mechanism": "h2o2",
    "integrator": {"rel_tol": 1e-8, "abs_tol": 1e-14},
    "sweep": [],
    "data": None,
    "train_files": None,
    "fuel_group": None,
    "exclude_phi": [],
    "multiplicities": None,
    "approach": "solution",
    "input_scaling": "linear",
    "target_scaling": "linear",
    "validation_fraction": 0.1,
    "seed": 0,
    "train": {},
    "run": None,
    "rollout": {"reference": None, "initial": None, "n_steps": None, "conserve_mass": False},
    "eval": {"pairs": []},
}


class CommandError(StiffnetError):
    """A command could not run with the given config or inputs."""


# --- config ---------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str):
    """Set ``a.b.c=value`` in a nested dict; values parse as JSON when possible."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"--set expects key=value, got {assignment!r}")
    node = cfg
    *parents, leaf = key.strip().split(".")
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"--set {key}: {p!r} is not a section")
    node[leaf] = _parse_value(value)


def _merge(base, extra):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def load_config(path=None, overrides=(), seed=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        _merge(cfg, user)
    for o in overrides:
        apply_override(cfg, o)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def train_config(cfg) -> TrainConfig:
    options = dict(cfg.get("train") or {})
    options.setdefault("init_seed", cfg.get("seed", 0))
    try:
        return TrainConfig.from_dict(options)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"train: {exc}") from exc


def integrator_config(cfg) -> IntegratorConfig:
    try:
        return IntegratorConfig(**(cfg.get("integrator") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"integrator: {exc}") from exc


def _require(value, what):
    if value is None:
        raise CommandError(f"missing required setting: {what}")
    return value


def _existing(path, what) -> Path:
    p = Path(_require(path, what))
    if not p.exists():
        raise CommandError(f"{what} not found: {p}")
    return p


# --- mech-validate --------------------------------------------------------


def cmd_mech_validate(cfg, out=None) -> dict:
    m = mech.load_mechanism(cfg["mechanism"])
    imbalance = m.mass_imbalance()
    report = {
        "name": m.name,
        "mechanism_id": mech.mechanism_id(m),
        "species": m.species_names,
        "reactions": [r.equation for r in m.reactions],
        "mass_imbalance": imbalance.tolist(),
        "roles": dict(m.roles),
    }
    bad = [m.reactions[i].equation for i in np.flatnonzero(imbalance > 1e-9)]
    if bad:
        raise CommandError("reactions do not conserve mass: " + "; ".join(bad))
    if {"fuel", "oxidizer"} <= set(m.roles):
        state = mech.ignition_mixture(m, 1.0, 1500.0)
        s = mech.rhs(m, state)
        if not np.all(np.isfinite(s)):
            raise CommandError("right-hand side is not finite at the reference mixture")
        report["reference_rhs"] = s.tolist()
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        io.write_json(Path(out) / "mechanism.json", report)
    return report


# --- generate -------------------------------------------------------------


def expand_sweep(sweep) -> list[dict]:
    """Entries whose ``phi`` or ``T0`` are lists expand to their product."""
    entries = []
    for entry in sweep:
        entry = dict(entry)
        keys = [k for k in ("phi", "T0") if isinstance(entry.get(k), list)]
        for combo in itertools.product(*(entry[k] for k in keys)):
            e = dict(entry)
            e.update(zip(keys, combo))
            entries.append(e)
    return entries


def _initial_state(m, entry):
    if "T0" not in entry:
        raise ConfigurationError(f"sweep entry {entry} lacks T0")
    T0 = float(entry["T0"])
    if "initial" in entry:
        rho = np.zeros(m.n_species)
        for name, value in entry["initial"].items():
            rho[m.index(name)] = float(value)
        return mech.State(T0, rho)
    if "phi" not in entry:
        raise ConfigurationError(f"sweep entry {entry} needs phi or initial densities")
    if "total_density" in entry:
        return mech.initial_state_from_phi(m, float(entry["phi"]), T0, float(entry["total_density"]))
    return mech.ignition_mixture(m, float(entry["phi"]), T0, float(entry.get("pressure", mech.ONE_ATMOSPHERE)))


def _generate_one(args):
    m, entry, config, set_id = args
    n_points = int(entry["n_points"])
    dt = float(entry["sample_dt"])
    if n_points < 2:
        raise ConfigurationError("n_points must be at least 2")
    meta = {"set_id": set_id, "T0": float(entry["T0"]), "n_points": n_points}
    if "phi" in entry:
        meta["phi"] = float(entry["phi"])
        meta["fuel_group"] = classify_fuel(meta["phi"])
    return integrate(m, _initial_state(m, entry), (n_points - 1) * dt, dt, config, meta)


def cmd_generate(cfg, out) -> list[Path]:
    m = mech.load_mechanism(cfg["mechanism"])
    entries = expand_sweep(cfg.get("sweep") or [])
    if not entries:
        raise CommandError("generate needs a nonempty sweep")
    config = integrator_config(cfg)
    out = Path(out)
    created_dir = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(m, e, config, i) for i, e in enumerate(entries)]
    written = []
    try:
        n_workers = worker_count(len(jobs))
        if n_workers == 1:
            trajectories = [_generate_one(j) for j in jobs]
        else:
            with ProcessPoolExecutor(n_workers) as pool:
                trajectories = list(pool.map(_generate_one, jobs))
        for i, traj in enumerate(trajectories):
            p = out / f"set_{i:02d}.csv"
            io.write_trajectory(p, traj)
            written += [p, io.sidecar(p)]
        manifest = out / "manifest.json"
        io.write_manifest(manifest, written, {"command": "generate", "mechanism_id": mech.mechanism_id(m)})
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        if created_dir and not any(out.iterdir()):
            out.rmdir()
        raise
    return written[::2]


# --- train ----------------------------------------------------------------


def select_trajectories(cfg):
    """Trajectory files chosen by explicit list, fuel group, and phi exclusions."""
    files = cfg.get("train_files")
    if files:
        paths = [_existing(f, "training trajectory") for f in files]
    else:
        data = _existing(cfg.get("data"), "data directory")
        paths = sorted(data.glob("set_*.csv"))
    trajs = [(p, io.read_trajectory(p)) for p in paths]
    group = cfg.get("fuel_group")
    excluded = [float(x) for x in cfg.get("exclude_phi") or []]
    chosen = []
    for p, t in trajs:
        phi = t.metadata.get("phi")
        if group is not None and (phi is None or classify_fuel(phi) != group):
            continue
        if phi is not None and any(np.isclose(phi, x, rtol=1e-12) for x in excluded):
            continue
        chosen.append((p, t))
    if not chosen:
        raise CommandError("no training trajectories match the selection")
    return chosen


def _multiplicities(cfg, paths):
    mult = cfg.get("multiplicities")
    if mult is None:
        return None
    if isinstance(mult, dict):
        return [int(mult.get(p.name, mult.get(p.stem, 1))) for p in paths]
    if len(mult) != len(paths):
        raise ConfigurationError(f"{len(mult)} multiplicities for {len(paths)} selected sets")
    return [int(x) for x in mult]


def cmd_train(cfg, out) -> Path:
    chosen = select_trajectories(cfg)
    paths = [p for p, _ in chosen]
    approach = cfg["approach"]
    sets = [PairSet.from_trajectory(t, approach, t.metadata.get("set_id", i)) for i, (_, t) in enumerate(chosen)]
    dt_values = {t.sample_dt for _, t in chosen}
    if len(dt_values) != 1:
        raise CommandError(f"selected trajectories mix sample_dt values {sorted(dt_values)}")
    ds = balance_by_replication(
        sets,
        _multiplicities(cfg, paths),
        approach,
        None,
        cfg["input_scaling"],
        cfg["target_scaling"],
        chosen[0][1].channels,
    )
    train_set, val_set = split_validation(ds, float(cfg["validation_fraction"]), int(cfg.get("seed", 0)))
    tcfg = train_config(cfg)
    surrogate, histories = train_parallel(train_set, val_set, tcfg)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = copy.deepcopy(cfg)
    snapshot["train"] = tcfg.to_dict()
    io.write_json(out / "config.json", snapshot)
    dataset_path = io.write_dataset(out / "dataset.csv", ds)
    ckpts = io.save_surrogate(out, surrogate)
    hist_paths = []
    for c, h in enumerate(histories):
        hp = out / f"history_{c:02d}.csv"
        io.write_history(hp, h)
        hist_paths.append(hp)
    io.write_json(
        out / "training.json",
        {
            "stop_reasons": [h.stop_reason for h in histories],
            "best_iterations": [h.best_index for h in histories],
            "best_val_loss": [min(h.val_loss) for h in histories],
            "n_train": len(train_set),
            "n_val": len(val_set),
        },
    )
    io.write_manifest(
        out / "manifest.json",
        [*paths, *map(io.sidecar, paths), dataset_path, io.sidecar(dataset_path), *ckpts, *hist_paths],
        {"command": "train"},
    )
    return out


# --- rollout --------------------------------------------------------------


def cmd_rollout(cfg, out) -> dict:
    run = _existing(cfg.get("run"), "run directory")
    surrogate = io.load_surrogate(run)
    spec = cfg.get("rollout") or {}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    conserve = bool(spec.get("conserve_mass", False))
    if spec.get("reference"):
        ref_path = _existing(spec["reference"], "reference trajectory")
        reference = io.read_trajectory(ref_path)
        result = evaluate_rollout(surrogate, reference, conserve)
        pred, metrics = result.predicted, result.metrics
        metrics["reference"] = str(ref_path)
        io.write_channel_pairs(out / "channels", pred, reference)
    else:
        initial = _require(spec.get("initial"), "rollout.reference or rollout.initial")
        n_steps = int(_require(spec.get("n_steps"), "rollout.n_steps"))
        m = mech.load_mechanism(cfg["mechanism"])
        u0 = _initial_state(m, initial).as_vector()
        pred = march(surrogate, u0, n_steps, conserve, surrogate.channels or None)
        metrics = {"total_clips": pred.metadata["total_clips"]}
    metrics["conserve_mass"] = conserve
    metrics["clip_counts"] = pred.metadata["clip_counts"]
    pred.metadata.pop("clip_counts")
    io.write_trajectory(out / "rollout.csv", pred)
    io.write_json(out / "metrics.json", metrics)
    return metrics


# --- eval -----------------------------------------------------------------


def cmd_eval(cfg, out) -> Path:
    pairs = (cfg.get("eval") or {}).get("pairs") or []
    if not pairs:
        raise CommandError("eval needs eval.pairs entries with predicted and reference files")
    rows = []
    for i, pair in enumerate(pairs):
        pred = io.read_trajectory(_existing(pair.get("predicted"), "predicted trajectory"))
        ref = io.read_trajectory(_existing(pair.get("reference"), "reference trajectory"))
        metrics = trajectory_error(pred, ref)
        rows.append((pair.get("name", f"pair_{i}"), metrics))
    channels = rows[0][1]["channels"]
    header = [
        "name",
        "ignition_delay_reference",
        "ignition_delay_predicted",
        "ignition_delay_error",
        "final_temperature_error",
        *(f"l2_{c}" for c in channels),
    ]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        table = []
        for name, m in rows:
            if m["channels"] != channels:
                raise CommandError(f"{name}: channels differ from the first pair")
            values = [
                m["ignition_delay_reference"],
                m["ignition_delay_predicted"],
                m["ignition_delay_error"],
                m["final_temperature_error"],
                *m["relative_l2"],
            ]
            table.append(values)
            w.writerow([name, *map(io._fmt, values)])
        w.writerow(["mean", *map(io._fmt, np.mean(table, axis=0))])
    return path


# --- entry point ----------------------------------------------------------

COMMANDS = {
    "mech-validate": cmd_mech_validate,
    "generate": cmd_generate,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stiffnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted keys, JSON values); repeatable")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="seed for initialization and the validation split")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        out = args.out or Path(cfg.get("out") or f"stiffnet-{args.command}")
        if args.command == "mech-validate":
            report = cmd_mech_validate(cfg, args.out)
            print(f"{report['name']}: {len(report['species'])} species, {len(report['reactions'])} reactions, ok")
        else:
            result = COMMANDS[args.command](cfg, out)
            log.info("%s finished: %s", args.command, result)
            print(f"{args.command}: wrote {out}")
    except (StiffnetError, OSError, ValueError) as exc:
        print(f"stiffnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
