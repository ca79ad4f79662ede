import json

import numpy as np
import pytest

from stiffnet import cli, io


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


def test_overrides_and_seed(tmp_path):
    p = write_config(tmp_path / "c.json", {"approach": "derivative", "train": {"depth": 3}})
    cfg = cli.load_config(p, ["train.width=7", "rollout.conserve_mass=true", "mechanism=robertson", "exclude_phi=[0.08]"], seed=9)
    assert cfg["approach"] == "derivative" and cfg["train"] == {"depth": 3, "width": 7}
    assert cfg["rollout"]["conserve_mass"] is True and cfg["mechanism"] == "robertson"
    assert cfg["exclude_phi"] == [0.08] and cfg["seed"] == 9
    assert cli.train_config(cfg).init_seed == 9
    with pytest.raises(cli.ConfigurationError):
        cli.apply_override({}, "novalue")


def test_sweep_expansion():
    table = cli.expand_sweep([{"phi": [0.01, 0.05, 0.1, 0.25, 0.5, 1, 2, 5, 10], "T0": 1200, "n_points": 999, "sample_dt": 1e-7}])
    assert len(table) == 9 and table[-1]["phi"] == 10 and table[0]["T0"] == 1200
    scan = cli.expand_sweep([{"phi": 1.0, "T0": list(range(1200, 2401, 100)), "n_points": 499, "sample_dt": 1e-7}])
    assert [e["T0"] for e in scan] == list(range(1200, 2401, 100))


def test_mech_validate(tmp_path, capsys):
    assert cli.main(["mech-validate"]) == 0
    assert "h2o2: 6 species, 5 reactions, ok" in capsys.readouterr().out
    assert cli.main(["mech-validate", "--set", "mechanism=robertson", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "mechanism.json").read_text())["species"] == ["A", "B", "C"]
    bad = tmp_path / "bad.mech"
    bad.write_text("[species]\nA 1.0 0\nB 2.0 0\n[reactions]\nA -> B  A=1\n[thermo]\ncp=1000\n")
    assert cli.main(["mech-validate", "--set", f"mechanism={bad}"]) == 1
    assert "do not conserve mass" in capsys.readouterr().err
    assert cli.main(["mech-validate", "--set", f"mechanism={tmp_path / 'none.mech'}"]) == 1


def test_generate_smoke_and_determinism(tmp_path):
    cfg = write_config(tmp_path / "g.json", {"sweep": [{"phi": 1.0, "T0": 1500.0, "n_points": 10, "sample_dt": 1e-7}]})
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    rows = (tmp_path / "a" / "set_00.csv").read_text().splitlines()
    assert len(rows) == 11 and rows[0].startswith("time,temperature,rho_H2,rho_O2")
    assert (tmp_path / "a" / "set_00.csv").read_bytes() == (tmp_path / "b" / "set_00.csv").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["files"]["set_00.csv"] == io.file_hash(tmp_path / "a" / "set_00.csv")
    meta = json.loads((tmp_path / "a" / "set_00.json").read_text())
    assert meta["phi"] == 1.0 and meta["fuel_group"] == "balanced" and meta["n_points"] == 10


def test_generate_failure_removes_outputs(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "g.json",
        {
            "sweep": [{"phi": 1.0, "T0": 1500.0, "n_points": 5, "sample_dt": 1e-7}],
            "integrator": {"max_newton_iters": 1, "min_substep": 1e-9},
        },
    )
    out = tmp_path / "fail"
    assert cli.main(["generate", "--config", str(cfg), "--out", str(out)]) == 1
    assert not out.exists()
    assert "minimum substep" in capsys.readouterr().err


def test_generate_requires_sweep(tmp_path):
    assert cli.main(["generate", "--out", str(tmp_path / "x")]) == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = {
        "mechanism": "linear_decay",
        "integrator": {"rel_tol": 1e-10, "abs_tol": 1e-15},
        "sweep": [{"T0": 300.0, "initial": {"A": 1.0}, "n_points": 101, "sample_dt": 0.01}],
        "approach": "derivative",
        "data": str(root / "gen"),
        "run": str(root / "run"),
        "train": {"max_iters": 60, "patience": 20},
        "rollout": {"reference": str(root / "gen" / "set_00.csv")},
    }
    path = write_config(root / "cfg.json", cfg)
    assert cli.main(["generate", "--config", str(path), "--out", str(root / "gen")]) == 0
    assert cli.main(["train", "--config", str(path), "--out", str(root / "run")]) == 0
    return root, path


def test_train_run_directory(pipeline):
    root, _ = pipeline
    run = root / "run"
    names = sorted(p.name for p in run.iterdir())
    for c in range(3):
        assert f"channel_{c:02d}.json" in names and f"history_{c:02d}.csv" in names
    assert {"config.json", "manifest.json", "dataset.csv", "dataset.json", "training.json"} <= set(names)
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["files"][str(root / "gen" / "set_00.csv")] == io.file_hash(root / "gen" / "set_00.csv")
    snapshot = json.loads((run / "config.json").read_text())
    assert snapshot["train"]["max_iters"] == 60 and snapshot["train"]["lam"] == 1e-7
    assert (run / "history_00.csv").read_text().startswith("iter,train_loss,val_loss,step,grad_norm\n")


def test_train_is_idempotent(pipeline):
    root, path = pipeline
    assert cli.main(["train", "--config", str(path), "--out", str(root / "run2")]) == 0
    for c in range(3):
        name = f"channel_{c:02d}.json"
        assert (root / "run" / name).read_bytes() == (root / "run2" / name).read_bytes()
    assert (root / "run" / "config.json").read_bytes() == (root / "run2" / "config.json").read_bytes()


def test_seed_changes_initialization(pipeline):
    root, path = pipeline
    assert cli.main(["train", "--config", str(path), "--seed", "5", "--set", "train.max_iters=1", "--out", str(root / "run3")]) == 0
    a = json.loads((root / "run" / "channel_01.json").read_text())
    b = json.loads((root / "run3" / "channel_01.json").read_text())
    assert a["weights"] != b["weights"]


def test_rollout_and_eval(pipeline):
    root, path = pipeline
    assert cli.main(["rollout", "--config", str(path), "--out", str(root / "roll")]) == 0
    metrics = json.loads((root / "roll" / "metrics.json").read_text())
    assert len(metrics["relative_l2"]) == 3 and metrics["total_clips"] == 0
    assert (root / "roll" / "channels" / "rho_A.csv").exists()
    pred = io.read_trajectory(root / "roll" / "rollout.csv")
    assert len(pred) == 101
    ref = str(root / "gen" / "set_00.csv")
    pairs = json.dumps([{"name": "self", "predicted": ref, "reference": ref}, {"name": "model", "predicted": str(root / "roll" / "rollout.csv"), "reference": ref}])
    assert cli.main(["eval", "--config", str(path), "--set", f"eval.pairs={pairs}", "--out", str(root / "ev")]) == 0
    lines = (root / "ev" / "summary.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["name", "ignition_delay_reference", "ignition_delay_predicted", "ignition_delay_error"]
    self_row = lines[1].split(",")
    assert self_row[0] == "self" and all(float(x) == 0 for x in self_row[3:])
    assert lines[-1].startswith("mean,")


def test_rollout_from_initial_condition(pipeline):
    root, path = pipeline
    args = ["rollout", "--config", str(path), "--set", "rollout.reference=null",
            "--set", 'rollout.initial={"T0": 300.0, "initial": {"A": 0.5}}', "--set", "rollout.n_steps=20",
            "--set", "rollout.conserve_mass=true", "--out", str(root / "roll2")]
    assert cli.main(args) == 0
    t = io.read_trajectory(root / "roll2" / "rollout.csv")
    assert len(t) == 21
    np.testing.assert_allclose(t.values[:, 1:].sum(axis=1), 0.5, rtol=1e-12)


def test_missing_artifacts_exit_nonzero(tmp_path, capsys):
    assert cli.main(["train", "--set", f"data={tmp_path / 'nothing'}", "--out", str(tmp_path / "r")]) == 1
    assert "data directory not found" in capsys.readouterr().err
    assert cli.main(["rollout", "--out", str(tmp_path / "r")]) == 1
    assert "run directory" in capsys.readouterr().err
    assert cli.main(["eval", "--out", str(tmp_path / "e")]) == 1
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 1


def test_fuel_group_selection(tmp_path):
    sweep = [{"phi": [0.05, 0.08, 1.0, 3.0], "T0": 1500.0, "n_points": 3, "sample_dt": 1e-7}]
    cfg = write_config(tmp_path / "g.json", {"sweep": sweep})
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "gen")]) == 0
    base = cli.load_config(cfg, [f"data={tmp_path / 'gen'}"])
    chosen = cli.select_trajectories(dict(base, fuel_group="lean"))
    assert [t.metadata["phi"] for _, t in chosen] == [0.05, 0.08]
    chosen = cli.select_trajectories(dict(base, fuel_group="lean", exclude_phi=[0.08]))
    assert [t.metadata["phi"] for _, t in chosen] == [0.05]
    with pytest.raises(cli.CommandError):
        cli.select_trajectories(dict(base, fuel_group="rich", exclude_phi=[3.0]))
    paths = [p for p, _ in cli.select_trajectories(base)]
    assert cli._multiplicities({"multiplicities": {"set_01": 8}}, paths) == [1, 8, 1, 1]
