import json

import numpy as np
import pytest

from faasched.cli import main
from faasched.experiment import (Calibration, ConfigError, ExperimentConfig, calibrate, emit_csv, load_config,
                                 read_records, run_experiment)
from faasched.host import RequestRecord


def write_cfg(tmp_path, text):
    p = tmp_path / "exp.ini"
    p.write_text(text)
    return p


SMALL = """
[experiment]
workloads = EG, VP
horizon = 60
train_duration = 120
seed = 4

[calibration]
horizon = 60
"""


def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config(write_cfg(tmp_path, SMALL + "\n[agent]\ntau = 0.6\nlr = 0.001\n[host]\nnum_cores = 4\n"))
    assert cfg.workloads == ["EG", "VP"] and cfg.horizon == 60.0
    assert cfg.agent.reward.tau == 0.6 and cfg.agent.lr == 0.001 and cfg.host.num_cores == 4
    d = ExperimentConfig()
    assert (d.agent.reward.a, d.agent.reward.b, d.agent.reward.c, d.agent.reward.tau) == (1000, 100, 1000, 0.75)
    assert (d.agent.p_step, d.agent.a_step, d.agent.epsilon, d.agent.lr, d.agent.gamma) == (10, 2, 0.3, 1e-4, 0.99)
    assert d.host.window == 5.0 and d.train_duration == 18000.0


def test_config_inline_comments(tmp_path):
    cfg = load_config(write_cfg(tmp_path, "[experiment]\ncontroller = partition(2,4)  ; static split\ncatalog =   ; builtin\n"))
    assert cfg.controller == "partition(2,4)" and cfg.catalog == ""


@pytest.mark.parametrize("text", ["[experiment]\nbogus = 1\n", "[nope]\nx = 1\n", "[host]\nnum_cores = six\n",
                                  "[experiment]\nworkloads = EG, ZZ\n", "[experiment]\ncontroller = magic\n",
                                  "[agent]\ntau = 1.5\n"])
def test_config_errors(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, text))


def test_calibration_solo_mr_and_roundtrip(tmp_path):
    cfg = ExperimentConfig(workloads=["MR"])
    cfg.calibration.horizon = 6000.0
    cfg.host = cfg.host.without_interference()
    cal = calibrate(cfg)
    assert cal.apps["MR"]["execution"]["mean"] == pytest.approx(0.125, rel=0.02)
    cal.save(tmp_path / "c.json")
    back = Calibration.load(tmp_path / "c.json")
    assert back.bounds == cal.bounds and back.apps == json.loads(cal.to_json())["apps"]


def test_calibration_seeds_differ_but_agree():
    cfg = ExperimentConfig(workloads=["BS"])
    cfg.calibration.horizon = 600.0
    a = calibrate(cfg)
    cfg.seed = 2
    b = calibrate(cfg)
    ea, eb = a.apps["BS"]["execution"], b.apps["BS"]["execution"]
    assert ea["mean"] != eb["mean"]
    se = np.sqrt(ea["variance"] / ea["n"] + eb["variance"] / eb["n"])
    assert abs(ea["mean"] - eb["mean"]) < 4 * se


def test_emit_csv_roundtrip_and_empty(tmp_path):
    emit_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == \
        "app,arrival,start_exec,completion,execution_latency,response_latency,cold_start\n"
    recs = [RequestRecord("A", 0.1 * i, 0.1 * i + 0.01, 0.3 * i + 1 / 3, i % 2 == 0) for i in range(50)]
    emit_csv(recs, tmp_path / "r.csv")
    assert read_records(tmp_path / "r.csv") == recs


def test_emit_csv_large_count(tmp_path):
    n = 1_000_000
    rec = RequestRecord("A", 1.0, 1.5, 2.0)
    emit_csv([rec] * n, tmp_path / "big.csv")
    with open(tmp_path / "big.csv") as f:
        assert sum(1 for _ in f) == n + 1


def test_emit_csv_io_error_leaves_nothing(tmp_path):
    target = tmp_path / "missing_dir" / "r.csv"
    with pytest.raises(OSError):
        emit_csv([], target)
    assert not target.exists()


def test_run_experiment_deterministic(tmp_path):
    cfg = load_config(write_cfg(tmp_path, SMALL))
    cal = calibrate(cfg)
    a = run_experiment(cfg, cal)
    b = run_experiment(cfg, cal)
    emit_csv(a.records, tmp_path / "a.csv")
    emit_csv(b.records, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert {s.app for s in a.summary} == {"EG", "VP"}
    assert a.metadata["config"]["agent"]["reward"]["tau"] == 0.75


def test_oversubscribed_partition_is_config_error(tmp_path):
    cfg = load_config(write_cfg(tmp_path, SMALL))
    cfg.controller = "partition(4,4)"
    with pytest.raises(ConfigError):
        run_experiment(cfg, calibrate(cfg))


def test_cli_end_to_end(tmp_path, capsys):
    ini = write_cfg(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["calibrate", "--config", str(ini), "--out", str(out)]) == 0
    assert (out / "calibration.json").exists()
    assert main(["run", "--config", str(ini), "--out", str(out), "--controller", "fp"]) == 0
    for f in ("requests.csv", "windows.csv", "summary.csv", "metadata.json"):
        assert (out / f).exists()
    assert main(["train", "--config", str(ini), "--out", str(out)]) == 0
    assert (out / "agent.npz").exists()
    assert main(["eval", "--config", str(ini), "--out", str(out), "--seed", "9"]) == 0
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "app,kind,mean" in text


def test_cli_exit_codes(tmp_path):
    assert main(["run", "--controller", "nonsense", "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(tmp_path / "absent.ini")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "absent.npz"), "--out", str(tmp_path)]) == 4
    assert main(["report", "--out", str(tmp_path / "empty")]) == 4
