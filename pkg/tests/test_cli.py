import json
import os
from pathlib import Path

import numpy as np
import pytest

from cids.cli import main
from cids.envs import LineGridConfig, linegrid_model
from cids.model import model_to_json
from cids.policy import PolicyParams, save_policy


TINY_TRAIN = [
    "--set", "vpg.iterations=8",
    "--set", "vpg.batch_size=4",
    "--set", "vpg.hidden_dim=8",
    "--set", "env.horizon=5",
]


def write_linegrid_model(path):
    path.write_text(model_to_json(linegrid_model(LineGridConfig())))


def test_validate_ok(tmp_path, capsys):
    p = tmp_path / "grid.json"
    write_linegrid_model(p)
    assert main(["validate", str(p)]) == 0
    assert "model ok" in capsys.readouterr().out


def test_validate_broken_row(tmp_path, capsys):
    p = tmp_path / "grid.json"
    doc = json.loads(model_to_json(linegrid_model(LineGridConfig())))
    doc["transition"][0][0][0][0] = 0.5
    p.write_text(json.dumps(doc))
    assert main(["validate", str(p)]) == 1
    assert "transition[c=0][a=0][s=0]" in capsys.readouterr().out


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2


def test_train_writes_artifacts_and_manifest(tmp_path):
    run = tmp_path / "run"
    code = main(["train", "--run-dir", str(run), "--seeds", "0", *TINY_TRAIN])
    assert code == 0
    assert (run / "manifest.json").exists()
    assert (run / "seed0" / "curve.csv").exists()
    assert (run / "seed0" / "policy.bin").exists()
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["resolved"]["vpg"]["iterations"] == 8


def test_train_zero_iterations(tmp_path):
    run = tmp_path / "run"
    code = main(
        ["train", "--run-dir", str(run), "--seeds", "0", "--iterations", "0", *TINY_TRAIN]
    )
    assert code == 0
    lines = (run / "seed0" / "curve.csv").read_text().splitlines()
    assert len(lines) == 1  # header only


def test_train_replay_is_byte_identical(tmp_path):
    run1, run2 = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--run-dir", str(run1), "--seeds", "0,1", *TINY_TRAIN]) == 0
    os.environ["CIDS_THREADS"] = "4"
    try:
        code = main(["train", "--replay", str(run1 / "manifest.json"), "--run-dir", str(run2)])
    finally:
        os.environ.pop("CIDS_THREADS")
    assert code == 0
    for seed in (0, 1):
        a = (run1 / f"seed{seed}" / "curve.csv").read_bytes()
        b = (run2 / f"seed{seed}" / "curve.csv").read_bytes()
        assert a == b
        pa = (run1 / f"seed{seed}" / "policy.bin").read_bytes()
        pb = (run2 / f"seed{seed}" / "policy.bin").read_bytes()
        assert pa == pb


def test_eval_rejects_zero_episodes(tmp_path):
    params = PolicyParams(
        np.zeros((4, 5)), np.zeros((4, 4)), np.zeros(4), np.zeros((3, 4)), np.zeros(3)
    )
    blob = tmp_path / "p.bin"
    save_policy(blob, params, "lightdark")
    assert main(["eval", str(blob), "--episodes", "0"]) == 2


def test_eval_rejects_dim_mismatch(tmp_path, capsys):
    params = PolicyParams(
        np.zeros((4, 9)), np.zeros((4, 4)), np.zeros(4), np.zeros((3, 4)), np.zeros(3)
    )
    blob = tmp_path / "p.bin"
    save_policy(blob, params, "other")
    assert main(["eval", str(blob), "--episodes", "4"]) == 2
    assert "dims" in capsys.readouterr().err


def test_eval_always_observe_hand_values(tmp_path, capsys):
    # forced-observe policy: returns depend only on where x0 lands
    params = PolicyParams(
        np.zeros((4, 5)),
        np.zeros((4, 4)),
        np.zeros(4),
        np.zeros((3, 4)),
        np.array([-50.0, -50.0, 50.0]),
    )
    blob = tmp_path / "obs.bin"
    save_policy(blob, params, "lightdark")
    out_json = tmp_path / "m.json"

    # context 0: every step pays -1 (x0 < 1 almost surely); the exact
    # expectation is sum(gamma^t) * (2 * P(x0 > 1) - 1) with x0 ~ N(0, 0.09)
    from math import erf, sqrt

    g = (1 - 0.95**20) / 0.05
    p_above_1 = 0.5 * (1.0 - erf(1.0 / (0.3 * sqrt(2.0))))
    want_c0 = g * (2.0 * p_above_1 - 1.0)
    code = main(
        ["eval", str(blob), "--episodes", "300", "--prior", "1,0",
         "--out-json", str(out_json)]
    )
    assert code == 0
    metrics = json.loads(out_json.read_text())
    assert metrics["return_mean"] == pytest.approx(want_c0, abs=0.05)

    # context 1: -1 only when x0 > 0 (half the mass), + for x0 < -1 (negligible)
    want_c1 = g * (p_above_1 - 0.5)
    code = main(
        ["eval", str(blob), "--episodes", "300", "--prior", "0,1",
         "--out-json", str(out_json)]
    )
    assert code == 0
    metrics = json.loads(out_json.read_text())
    se = g * 0.5 / np.sqrt(300)
    assert metrics["return_mean"] == pytest.approx(want_c1, abs=3.5 * se)


def test_eval_dump_trajectories(tmp_path):
    params = PolicyParams(
        np.zeros((4, 5)), np.zeros((4, 4)), np.zeros(4), np.zeros((3, 4)), np.zeros(3)
    )
    blob = tmp_path / "p.bin"
    save_policy(blob, params, "lightdark")
    dump = tmp_path / "traj.csv"
    code = main(
        ["eval", str(blob), "--episodes", "3", "--horizon", "4",
         "--dump-trajectories", str(dump), "--debug"]
    )
    assert code == 0
    lines = dump.read_text().splitlines()
    assert lines[0].endswith("x_true,context")
    assert len(lines) == 1 + 3 * 4


def test_cids_single_context_report(tmp_path):
    run = tmp_path / "run"
    code = main(
        [
            "cids", "--run-dir", str(run), "--seeds", "0", "--env", "linegrid",
            "--prior", "1,0",
            "--episodes", "2", "--inner-iterations", "3", "--mc-samples", "2",
            "--oracle-budget", "2",
            "--set", "vpg.batch_size=4", "--set", "vpg.hidden_dim=8",
            "--set", "env.grid_horizon=3",
        ]
    )
    assert code == 0
    report = (run / "seed0" / "report.csv").read_text().splitlines()
    assert report[0] == "k,return,entropy_bits,info_gain_bits,delta_hat,i1_hat,i2,br_cum,psi_hat"
    assert len(report) == 3
    # point-mass prior means the true context is fixed and info gain is zero
    assert all(line.split(",")[3] == "0" for line in report[1:])
    agg = json.loads((run / "aggregate.json").read_text())
    assert agg["seeds"] == [0]


def test_plot_writes_deterministic_svgs(tmp_path):
    csv1 = tmp_path / "a.csv"
    csv1.write_text("iter,val\n0,1.0\n1,2.5\n2,1.5\n")
    csv2 = tmp_path / "b.csv"
    csv2.write_text("iter,val\n0,2.0\n1,0.5\n2,3.5\n")
    out1, out2 = tmp_path / "p1", tmp_path / "p2"
    assert main(["plot", str(csv1), str(csv2), "--out", str(out1)]) == 0
    assert main(["plot", str(csv1), str(csv2), "--out", str(out2)]) == 0
    svg1 = (out1 / "val.svg").read_bytes()
    svg2 = (out2 / "val.svg").read_bytes()
    assert svg1 == svg2
    assert b"<svg" in svg1 and b"polyline" in svg1
    assert svg1.count(b"polyline") >= 2  # one per input file


def test_plot_single_row_csv(tmp_path):
    csv1 = tmp_path / "one.csv"
    csv1.write_text("iter,val\n0,1.0\n")
    assert main(["plot", str(csv1), "--out", str(tmp_path / "out")]) == 0
    svg = (tmp_path / "out" / "val.svg").read_text()
    assert "circle" in svg


def test_plot_malformed_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("only-header\n")
    assert main(["plot", str(bad), "--out", str(tmp_path / "out")]) == 2


def test_help_exits_zero():
    for cmd in ("validate", "train", "cids", "eval", "plot"):
        with pytest.raises(SystemExit) as e:
            main([cmd, "--help"])
        assert e.value.code == 0


def test_profiles(tmp_path):
    assert main(["train", "--profile", "desk", "--run-dir", str(tmp_path / "r"),
                 "--seeds", "0", "--iterations", "0"]) == 0
    # argparse rejects unknown profiles with the usage exit code
    with pytest.raises(SystemExit) as e:
        main(["train", "--profile", "nope", "--run-dir", str(tmp_path / "r2")])
    assert e.value.code == 2
