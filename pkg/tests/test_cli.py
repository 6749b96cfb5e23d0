import csv
import json
from os.path import join
from unittest.mock import patch

import numpy as np
import pytest

from qm2arl import qnn
from qm2arl.cli import main
from qm2arl.envs import TwoStepEnv
from qm2arl.memory import PoleMemoryStore, pole_memory_load


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.reader(handle))


@pytest.fixture(scope="module")
def meta_model(tmp_path_factory):
    out = tmp_path_factory.mktemp("meta")
    assert main(["train-meta", "--meta-epochs", "3", "--out", str(out), "-q"]) == 0
    return out


def test_help(capsys):
    with patch("sys.argv", ["qm2arl", "--help"]):
        with pytest.raises(SystemExit):
            main()

    out, _ = capsys.readouterr()
    assert "quantum multi-agent Q-networks" in out


def test_subcommand_help(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["train-pole", "--help"])
    assert excinfo.value.code == 0
    out, _ = capsys.readouterr()
    assert "--model-in" in out
    assert "--alpha" in out


def test_missing_subcommand():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2


def test_train_meta_outputs(meta_model):
    loss = read_rows(join(meta_model, "loss.csv"))
    assert loss[0] == ["epoch", "loss"]
    assert [row[0] for row in loss[1:]] == ["1", "2", "3"]
    assert all(np.isfinite(float(row[1])) for row in loss[1:])

    qtable = read_rows(join(meta_model, "qtable.csv"))
    assert qtable[0] == ["state", "action", "q_meta", "q_optimal"]
    assert len(qtable) == 7
    assert [float(row[3]) for row in qtable[1:]] == [7.0, 4.5, 7.0, 7.0, 0.5, 4.5]

    store = PoleMemoryStore.read(join(meta_model, "model.mem"))
    assert store.labels == ["meta"]
    assert store.entries["meta"].epoch == 3
    assert store.entries["meta"].alpha_degrees == 30.0

    manifest = json.loads(open(join(meta_model, "manifest.json")).read())
    assert manifest["command"] == "train-meta"
    assert manifest["config"]["meta_epochs"] == 3
    assert set(manifest["artifacts"]) == {"loss.csv", "qtable.csv", "model.mem"}


def test_train_meta_is_reproducible(meta_model, tmp_path):
    argv = ["qm2arl", "train-meta", "--meta-epochs", "3", "--out", str(tmp_path)]
    with patch("sys.argv", argv):
        assert main() == 0
    for name in ("loss.csv", "qtable.csv", "model.mem"):
        first = (meta_model / name).read_bytes()
        assert (tmp_path / name).read_bytes() == first


def test_train_pole_outputs(meta_model, tmp_path):
    model = join(meta_model, "model.mem")
    code = main(
        ["train-pole", "--model-in", model, "--pole-epochs", "2", "--out", str(tmp_path), "-q"]
    )
    assert code == 0

    returns = read_rows(join(tmp_path, "return.csv"))
    assert returns[0] == ["epoch", "return", "distance"]
    assert len(returns) == 3
    assert all(float(row[2]) >= 0 for row in returns[1:])

    trajectory = read_rows(join(tmp_path, "pole_trajectory.csv"))
    assert trajectory[0] == ["epoch", "agent"] + [f"theta{k}" for k in range(1, 7)]
    assert len(trajectory) == 1 + 3 * 2
    assert [row[:2] for row in trajectory[1:3]] == [["0", "0"], ["0", "1"]]
    assert all(float(row[2]) == 0.0 for row in trajectory[1:3])
    angles = np.array([[float(x) for x in row[2:]] for row in trajectory[1:]])
    assert np.all(np.abs(angles) <= np.pi)

    store = PoleMemoryStore.read(join(tmp_path, "model.mem"))
    assert store.labels == ["meta", "twostep-main"]
    np.testing.assert_array_equal(pole_memory_load(store, "twostep-main"), angles[-2:])
    meta = PoleMemoryStore.read(model)
    assert store.angles.tobytes() == meta.angles.tobytes()


def test_train_pole_rejects_a_mismatched_model(meta_model, tmp_path):
    model = join(meta_model, "model.mem")
    code = main(["train-pole", "--model-in", model, "--env", "singlehop", "--out", str(tmp_path)])
    assert code == 1
    assert not (tmp_path / "return.csv").exists()


def test_train_pole_without_model(tmp_path):
    code = main(["train-pole", "--model-in", str(tmp_path / "none.mem"), "--out", str(tmp_path)])
    assert code == 1


def test_train_pole_with_a_broken_model(tmp_path):
    path = tmp_path / "broken.mem"
    path.write_text("{}")
    assert main(["train-pole", "--model-in", str(path), "--out", str(tmp_path)]) == 1


def test_probe(meta_model, tmp_path, capsys):
    model = join(meta_model, "model.mem")
    code = main(["probe", "--model-in", model, "--state", "s3", "--out", str(tmp_path), "-q"])
    assert code == 0
    rows = read_rows(join(tmp_path, "polegrid.csv"))
    assert rows[0] == ["theta1", "theta2", "qmax"]
    assert len(rows) == 1 + 33 * 33

    store = PoleMemoryStore.read(model)
    observation = TwoStepEnv("twostep-main").probe_observations()["s3"][0]
    expected = np.max(qnn.q_values_all(observation, store.angles, np.zeros(6), store.config))
    origin = rows[1 + 16 * 33 + 16]
    assert float(origin[0]) == 0.0 and float(origin[1]) == 0.0
    assert float(origin[2]) == expected
    out, _ = capsys.readouterr()
    assert "state s3" in out


def test_probe_needs_two_step(meta_model, tmp_path):
    model = join(meta_model, "model.mem")
    assert main(["probe", "--model-in", model, "--env", "singlehop", "--out", str(tmp_path)]) == 1


def test_continual(tmp_path, capsys):
    code = main(
        [
            "continual",
            "--meta-epochs",
            "2",
            "--phase-epochs",
            "2",
            "--out",
            str(tmp_path),
            "-q",
        ]
    )
    assert code == 0
    rows = read_rows(join(tmp_path, "distance.csv"))
    assert rows[0] == ["epoch", "phase", "distance", "memory_enabled"]
    assert len(rows) == 1 + 2 * 3 * 2
    memory_rows = [row for row in rows[1:] if row[3] == "1"]
    assert [row[0] for row in memory_rows] == [str(e) for e in range(1, 7)]
    assert [row[1] for row in memory_rows] == ["1", "1", "2", "2", "3", "3"]

    store = PoleMemoryStore.read(join(tmp_path, "model.mem"))
    assert store.labels == ["meta", "twostep-a", "twostep-b"]
    out, _ = capsys.readouterr()
    lines = out.strip().split("\n")
    assert lines[0].split("\t") == [
        "arm",
        "phase",
        "env",
        "threshold",
        "epochs_to_threshold",
        "start_threshold",
        "epochs_to_start_threshold",
    ]
    assert len(lines) == 1 + 6
    assert all(len(line.split("\t")) == 7 for line in lines[1:])


def test_continual_needs_two_step(tmp_path):
    assert main(["continual", "--env", "singlehop", "--out", str(tmp_path)]) == 1


def test_verify(tmp_path, capsys):
    code = main(
        ["verify", "--samples", "5000", "--lemma-configs", "1", "--out", str(tmp_path), "-q"]
    )
    assert code == 0
    lines = (tmp_path / "lemma_reports.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["lemma"] for r in records] == ["contraction"] * 4 + ["variance_bound"]
    assert [round(r["alpha_degrees"]) for r in records] == [30, 45, 60, 90, 60]
    out, _ = capsys.readouterr()
    assert out.count("yes") == 5
    assert all(type(r["passed"]) is bool for r in records)
    assert "r/beta in [8, 10]" in out


def test_verify_with_the_shared_action_map(tmp_path):
    argv = ["verify", "--samples", "2000", "--lemma-configs", "1", "--action-map", "shared"]
    assert main(argv + ["--out", str(tmp_path), "-q"]) in (0, 2)
    lines = (tmp_path / "lemma_reports.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["lemma"] == "variance_bound"


def test_train_meta_with_the_shared_action_map(tmp_path):
    argv = ["train-meta", "--meta-epochs", "2", "--action-map", "shared", "--out", str(tmp_path)]
    assert main(argv + ["-q"]) == 0
    store = PoleMemoryStore.read(join(tmp_path, "model.mem"))
    assert store.config.action_qubits == ((1, 2), (1, 3))


def test_train_pole_keep_best(meta_model, tmp_path):
    model = join(meta_model, "model.mem")
    argv = ["train-pole", "--model-in", model, "--pole-epochs", "3", "--keep-best"]
    assert main(argv + ["--learning-rate", "0.3", "--out", str(tmp_path), "-q"]) == 0
    returns = [float(row[1]) for row in read_rows(join(tmp_path, "return.csv"))[1:]]
    trajectory = read_rows(join(tmp_path, "pole_trajectory.csv"))[1:]
    by_epoch = {}
    for row in trajectory:
        by_epoch.setdefault(int(row[0]), []).append([float(x) for x in row[2:]])
    saved = pole_memory_load(PoleMemoryStore.read(join(tmp_path, "model.mem")), "twostep-main")
    assert any(np.array_equal(saved, np.array(poles)) for poles in by_epoch.values())
    manifest = json.loads(open(join(tmp_path, "manifest.json")).read())
    assert manifest["config"]["keep_best"] is True
    assert len(returns) == 3


def test_baseline_ctde(tmp_path, capsys):
    argv = ["baseline", "--method", "ctde", "--pole-epochs", "2", "--depth", "1"]
    assert main(argv + ["--out", str(tmp_path), "-q"]) == 0
    rows = read_rows(join(tmp_path, "return.csv"))
    assert rows[0] == ["epoch", "return", "loss"]
    assert [row[0] for row in rows[1:]] == ["1", "2"]
    manifest = json.loads(open(join(tmp_path, "manifest.json")).read())
    assert manifest["command"] == "baseline"
    assert manifest["config"]["method"] == "ctde"
    assert manifest["artifacts"] == ["return.csv"]
    out, _ = capsys.readouterr()
    assert out.startswith("ctde: final greedy return")


def test_baseline_without_pretraining(tmp_path):
    argv = ["baseline", "--method", "no-pretrain", "--pole-epochs", "2"]
    assert main(argv + ["--out", str(tmp_path), "-q"]) == 0
    rows = read_rows(join(tmp_path, "return.csv"))
    assert rows[0] == ["epoch", "return", "distance"]
    assert all(float(row[2]) >= 0 for row in rows[1:])
    store = PoleMemoryStore.read(join(tmp_path, "model.mem"))
    assert store.labels == ["meta", "twostep-main"]


def test_baseline_unknown_method(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(["baseline", "--method", "qmix", "--out", str(tmp_path)])
    assert excinfo.value.code == 2


@pytest.mark.slow
def test_train_pole_return_improves(tmp_path):
    meta, pole = tmp_path / "meta", tmp_path / "pole"
    shared = ["--action-map", "shared", "--learning-rate", "0.005", "-q"]
    assert main(["train-meta", "--meta-epochs", "2000", "--out", str(meta)] + shared) == 0
    argv = ["train-pole", "--model-in", str(meta / "model.mem"), "--pole-epochs", "2000"]
    assert main(argv + ["--out", str(pole)] + shared) == 0
    returns = [float(row[1]) for row in read_rows(pole / "return.csv")[1:]]
    window = len(returns) // 10
    assert np.mean(returns[-window:]) >= np.mean(returns[:window])


def test_gradcheck(capsys):
    assert main(["gradcheck", "--gradcheck-configs", "2", "-q"]) == 0
    out, _ = capsys.readouterr()
    categories = [line.split("\t")[0] for line in out.strip().split("\n")[1:]]
    assert categories == ["angle", "pole", "meta_loss", "pole_loss"]


def test_gradcheck_sabotage():
    assert main(["gradcheck", "--gradcheck-configs", "2", "--sabotage", "-q"]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["train-meta", "--alpha", "200"],
        ["train-meta", "--env", "twostep-c"],
        ["gradcheck", "--gradcheck-configs", "0"],
    ],
)
def test_invalid_configuration(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 1


def test_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"meta_epochs": 2, "output_dir": str(tmp_path / "run")}))
    assert main(["train-meta", "--config", str(path), "-q"]) == 0
    assert len(read_rows(tmp_path / "run" / "loss.csv")) == 3


def test_unknown_config_key(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"epochs": 2}))
    assert main(["train-meta", "--config", str(path), "--out", str(tmp_path)]) == 1
