import json
import subprocess
import sys

import pytest

from tabletop_her import cli, ddpg
from tabletop_her.trainer import read_metrics

TINY = {"epochs": 2, "cycles_per_epoch": 1, "episodes_per_cycle": 4, "optimizer_steps_per_cycle": 2,
        "eval_episodes": 4, "checkpoint_every": 1,
        "hyperparams": {"rollout_batch": 4, "batch_size": 16, "hidden_units": 8}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_eval_analyze_pipeline(tmp_path, config, capsys):
    code, out, _ = run(capsys, "train", "--env", "wall", "--config", config, "--seed", 1, "--out", tmp_path / "run")
    assert code == 0
    ckpt = json.loads(out)["checkpoint"]
    assert len(read_metrics(tmp_path / "run" / "metrics.csv")) == 2

    code, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--episodes", 5, "--seed", 2, "--log-dir", tmp_path / "logs")
    assert code == 0
    summary = json.loads(out)
    assert summary["env"] == "wall" and summary["episodes"] == 5
    assert (tmp_path / "logs" / "eval_wall_seed2.jsonl").exists()

    code, out, _ = run(capsys, "analyze", "--logs", tmp_path / "logs", "--out", tmp_path / "an", "--bandwidth", 0.03)
    assert code == 0
    names = {p.rsplit("/", 1)[-1] for p in json.loads(out)["files"]}
    assert {"episodes.csv", "success_vs_x.csv", "success_density_x.svg"} <= names


def test_from_checkpoint_resumes_or_warm_starts(tmp_path, config, capsys):
    run(capsys, "train", "--env", "flat", "--config", config, "--seed", 1, "--out", tmp_path / "a")
    ckpt = tmp_path / "a" / "final.json"
    code, _, err = run(capsys, "train", "--env", "flat", "--config", config, "--seed", 1, "--out", tmp_path / "b",
                       "--from-checkpoint", ckpt)
    assert code == 0 and "warning" not in err
    assert read_metrics(tmp_path / "b" / "metrics.csv") == []  # already at the configured epoch count
    code, _, err = run(capsys, "train", "--env", "target-moving", "--config", config, "--seed", 1,
                       "--out", tmp_path / "c", "--from-checkpoint", ckpt)
    assert code == 0 and "warm-starting" in err
    assert [r["epoch"] for r in read_metrics(tmp_path / "c" / "metrics.csv")] == [1, 2]


def test_config_errors_exit_2(tmp_path, config, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "episodes_per_cycle": 1}))
    assert run(capsys, "train", "--env", "flat", "--config", bad, "--out", tmp_path / "x")[0] == 2
    bad.write_text(json.dumps({**TINY, "learning_rate": 1}))
    assert run(capsys, "train", "--env", "flat", "--config", bad, "--out", tmp_path / "x")[0] == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--env", "moon", "--out", str(tmp_path)])
    assert info.value.code == 2
    run(capsys, "train", "--env", "flat", "--config", config, "--out", tmp_path / "ok")
    ckpt = tmp_path / "ok" / "final.json"
    assert run(capsys, "eval", "--checkpoint", ckpt, "--episodes", 0)[0] == 2
    assert run(capsys, "eval", "--checkpoint", ckpt, "--env", "rstatesp", "--episodes", 1)[0] == 2
    assert run(capsys, "analyze", "--logs", tmp_path / "ok", "--out", tmp_path / "an")[0] == 2  # no logs


def test_numeric_abort_exits_3(tmp_path, config, capsys, monkeypatch):
    monkeypatch.setattr(ddpg, "critic_loss_and_grad", lambda *a: (float("inf"), None))
    code, _, err = run(capsys, "train", "--env", "flat", "--config", config, "--out", tmp_path / "run")
    assert code == 3
    assert (tmp_path / "run" / "abort.json").exists() and "abort.json" in err


def test_corrupt_checkpoint_exits_1(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text('{"format": "tabletop-her-checkpoint"')
    code, _, err = run(capsys, "eval", "--checkpoint", bad, "--episodes", 1)
    assert code == 1 and "document" in err


def test_baseline_command(capsys):
    code, out, _ = run(capsys, "baseline", "--env", "wall", "--episodes", 20)
    assert code == 0 and 0.0 <= json.loads(out)["success_rate"] <= 1.0


def test_console_script_module_entry():
    proc = subprocess.run([sys.executable, "-m", "tabletop_her.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("train", "eval", "analyze"):
        assert command in proc.stdout
