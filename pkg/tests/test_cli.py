"""CLI harness: config handling, artifacts, reproducibility, exit codes."""

import json

import numpy as np
import pytest

from greenstream.cli import main, read_training_log
from greenstream.config import (
    ConfigError,
    apply_overrides,
    build_agent_config,
    build_link,
    build_scenario,
    build_video_model,
    default_config,
    load_config,
    save_config,
    validate_config,
)

TINY_RUN = {
    "video": {"n_segments": 3},
    "agent": {"batch": 24, "replay_capacity": 4000, "hidden_ddpg": 16,
              "hidden_pds": 16, "virtual_episodes": 1},
    "run": {"algo": "pds_ddpg", "episodes": 3, "seed": 7,
            "env_mode": "idealized", "checkpoint_every": 2,
            "eval_episodes": 4},
}


def write_tiny_config(tmp_path, **extra):
    cfg = json.loads(json.dumps(TINY_RUN))
    for section, fields in extra.items():
        cfg.setdefault(section, {}).update(fields)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_default_config_values_match_documented_defaults():
    cfg = default_config()
    assert cfg["link"] == {"bandwidth_mhz": 20.0, "noise_dbm": -95.0,
                           "p_max_dbm": 46.0}
    assert cfg["scenario"]["bs_spacing_m"] == 500.0
    assert cfg["scenario"]["pathloss_a_db"] == 35.3
    assert cfg["scenario"]["pathloss_b_db_per_decade"] == 37.6
    assert cfg["video"]["n_segments"] == 15
    assert cfg["video"]["frames_per_segment"] == 10
    assert cfg["agent"]["batch"] == 1024
    assert cfg["agent"]["lr_actor"] == 1e-4
    assert cfg["agent"]["lr_critic"] == 1e-3
    assert cfg["agent"]["omega"] == 1e-3
    assert cfg["agent"]["replay_capacity"] == 1_000_000
    assert cfg["agent"]["rate_bound_mbps"] == 80.0
    link = build_link(cfg)
    assert link.p_max == pytest.approx(39.81, abs=0.01)
    assert link.sigma2 == pytest.approx(3.1623e-13, rel=1e-4)


def test_builders_produce_runtime_objects():
    cfg = default_config()
    scenario = build_scenario(cfg)
    video = build_video_model(cfg)
    agent = build_agent_config(cfg)
    assert scenario.n_bs_tracked == 2 and scenario.history_len == 2
    assert video.nominal_horizon == 140
    assert agent.rate_bound == 80e6


def test_missing_required_field_names_it(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"run": {"algo": "ddpg", "episodes": 5}}))
    with pytest.raises(ConfigError, match="run.seed"):
        load_config(path)


def test_unknown_field_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"run": {"algo": "ddpg", "episodes": 5,
                                        "seed": 1, "warp": 9}}))
    with pytest.raises(ConfigError, match="warp"):
        load_config(path)


def test_overrides_dotted_paths():
    cfg = default_config()
    out = apply_overrides(cfg, ["agent.batch=512", "run.algo=ddpg",
                                "scenario.road_offsets_m=[100.0, 200.0]"])
    assert out["agent"]["batch"] == 512
    assert out["run"]["algo"] == "ddpg"
    assert out["scenario"]["road_offsets_m"] == [100.0, 200.0]
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["agent.nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["garbage"])


def test_validate_ranges():
    cfg = default_config()
    cfg["agent"]["gamma"] = 1.5
    with pytest.raises(ConfigError, match="agent.gamma"):
        validate_config(cfg)


def test_train_writes_artifacts_and_reproduces(tmp_path):
    cfg_path = write_tiny_config(tmp_path)
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert main(["train", "--config", str(cfg_path),
                 "--outdir", str(out1)]) == 0
    assert main(["train", "--config", str(cfg_path),
                 "--outdir", str(out2)]) == 0
    log1 = (out1 / "training_log.csv").read_bytes()
    log2 = (out2 / "training_log.csv").read_bytes()
    assert log1 == log2  # same seed: byte-identical logs
    rows = read_training_log(out1 / "training_log.csv")
    assert len(rows) == 3
    assert (out1 / "config.json").exists()
    assert (out1 / "actor.csv").exists()
    assert (out1 / "critic.csv").exists()
    assert (out1 / "learning_curve.png").stat().st_size > 0
    assert (out1 / "checkpoints" / "ep00002_actor.csv").exists()
    snap = json.loads((out1 / "config.json").read_text())
    assert snap["run"]["seed"] == 7
    # different seed: different log
    out3 = tmp_path / "run3"
    assert main(["train", "--config", str(cfg_path), "--set", "run.seed=8",
                 "--outdir", str(out3)]) == 0
    assert (out3 / "training_log.csv").read_bytes() != log1


def test_eval_baseline_and_artifacts(tmp_path):
    cfg_path = write_tiny_config(tmp_path)
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path),
                 "--outdir", str(run_dir)]) == 0
    eval_dir = tmp_path / "eval"
    assert main(["eval", "--config", str(cfg_path), "--checkpoint",
                 str(run_dir / "actor.csv"), "--episodes", "4",
                 "--outdir", str(eval_dir), "--idealized"]) == 0
    metrics = (eval_dir / "metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("# greenstream eval-metrics")
    learned_rows = [l for l in metrics if l.startswith("learned,")]
    assert len(learned_rows) == 4  # one row per eval episode
    assert (eval_dir / "energy_cdf.png").stat().st_size > 0
    assert (eval_dir / "policy_trace.png").stat().st_size > 0
    assert (eval_dir / "policy_trace.csv").exists()

    # baseline needs no checkpoint
    base_dir = tmp_path / "base"
    assert main(["baseline", "--config", str(cfg_path), "--policy",
                 "non_predictive", "--episodes", "3",
                 "--outdir", str(base_dir), "--idealized"]) == 0
    base_metrics = (base_dir / "metrics.csv").read_text().splitlines()
    assert len([l for l in base_metrics
                if l.startswith("non_predictive,")]) == 3


def test_eval_missing_checkpoint_fails(tmp_path):
    cfg_path = write_tiny_config(tmp_path)
    assert main(["eval", "--config", str(cfg_path), "--checkpoint",
                 str(tmp_path / "nope.csv"), "--episodes", "1"]) == 1


def test_config_error_exit_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["train", "--config", str(path)]) == 1


def test_trace_gen(tmp_path):
    cfg_path = write_tiny_config(tmp_path)
    out = tmp_path / "trace.csv"
    assert main(["trace-gen", "--config", str(cfg_path), "--frames", "25",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("frame,")
    assert len(lines) == 1 + 25 + 2  # header + frames + preroll


def test_verify_subcommand_prop2():
    # fastest suite; full coverage of the others lives in test_acceptance
    assert main(["verify", "--suite", "prop2"]) == 0


def test_init_config_writes_defaults(tmp_path):
    out = tmp_path / "default.json"
    assert main(["init-config", "--out", str(out)]) == 0
    cfg = json.loads(out.read_text())
    assert cfg["agent"]["batch"] == 1024


def test_config_snapshot_roundtrip(tmp_path):
    cfg = default_config()
    cfg["run"]["seed"] = 123
    path = tmp_path / "snap.json"
    save_config(cfg, path)
    back = json.loads(path.read_text())
    assert back == cfg
