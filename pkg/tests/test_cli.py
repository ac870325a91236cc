import json
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml
from click.testing import CliRunner

from strokerl.cli import EXIT_CONFIG, EXIT_INTEGRITY, EXIT_IO, main
from strokerl.config import ConfigError, load_run_config
from strokerl.policy import load_agent, make_agent, save_agent


def tiny_config(tmp_path, **overrides):
    cfg = {
        "seed": 3,
        "scheme": "combined",
        "patch": [8, 8],
        "env": {"max_steps": 8, "grace_steps": 2},
        "bc": {"epochs": 2, "batch_size": 16},
        "ppo": {
            "rollout_batch": 16,
            "iterations": 2,
            "minibatch_size": 16,
            "epochs_per_batch": 1,
        },
        "benchmark": {"patch_count": 3, "train_patch_count": 4},
        "paths": {"out_dir": str(tmp_path / "out")},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and key in cfg:
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestConfig:
    def test_defaults_loaded(self, tmp_path):
        cfg = load_run_config(tiny_config(tmp_path))
        assert cfg.seed == 3
        assert cfg.scheme == "combined"
        assert cfg.patch.height == 8
        assert cfg.env.max_steps == 8
        assert cfg.ppo.iterations == 2
        assert cfg.runtime.thresh_sim == 0.01

    def test_unknown_key_rejected(self, tmp_path):
        path = tiny_config(tmp_path)
        raw = yaml.safe_load(path.read_text())
        raw["tpyo"] = 1
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        path = tiny_config(tmp_path, env={"max_stepz": 10})
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_bad_scheme_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tiny_config(tmp_path, scheme="psychic"))

    def test_bad_type_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tiny_config(tmp_path, seed="zero"))

    def test_bad_value_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tiny_config(tmp_path, env={"gamma": 2.5}))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.yaml")


class TestTrainCommand:
    def test_writes_checkpoint_and_stats(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, ["train", "--config", str(tiny_config(tmp_path))])
        assert result.exit_code == 0, result.output
        out = tmp_path / "out"
        assert (out / "checkpoint_combined.pt").exists()
        stats = (out / "trainstats_combined.csv").read_text()
        assert "mean_cumulative_reward" in stats

    def test_zero_iterations_checkpoint_is_initialization(self, tmp_path):
        runner = CliRunner()
        path = tiny_config(tmp_path, ppo={"iterations": 0, "rollout_batch": 16,
                                          "minibatch_size": 16, "epochs_per_batch": 1},
                           scheme="rl_only")
        result = runner.invoke(main, ["train", "--config", str(path)])
        assert result.exit_code == 0, result.output
        trained = load_agent(tmp_path / "out" / "checkpoint_rl_only.pt")
        fresh = make_agent(patch_side=8, seed=3)
        for pa, pb in zip(trained.policy.parameters(), fresh.policy.parameters()):
            assert torch.equal(pa, pb)

    def test_config_error_exit_code(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, ["train", "--config",
                                      str(tiny_config(tmp_path, scheme="nope"))])
        assert result.exit_code == EXIT_CONFIG


class TestPaintAndReplay:
    def checkpoint(self, tmp_path):
        agent = make_agent(patch_side=8, seed=0)
        path = tmp_path / "agent.pt"
        save_agent(agent, path)
        return path

    def reference(self, tmp_path):
        from strokerl.benchmark import synthetic_source
        from strokerl.imageio import save_image

        ref = synthetic_source(16, 16, seed=9)
        path = tmp_path / "ref.ppm"
        save_image(ref, path)
        return path

    def test_paint_then_replay(self, tmp_path):
        runner = CliRunner()
        ckpt = self.checkpoint(tmp_path)
        ref = self.reference(tmp_path)
        out = tmp_path / "painted.ppm"
        result = runner.invoke(main, [
            "paint", "--checkpoint", str(ckpt), "--reference", str(ref),
            "--out", str(out), "--strokes", "20", "--patch", "8",
        ])
        assert result.exit_code == 0, result.output
        assert out.exists()
        log_path = out.with_suffix(".strokes.json")
        assert log_path.exists()
        assert out.with_suffix(".losstrace.csv").exists()

        replay_out = tmp_path / "replayed.ppm"
        result = runner.invoke(main, [
            "replay", "--log", str(log_path), "--out", str(replay_out),
        ])
        assert result.exit_code == 0, result.output
        assert replay_out.read_bytes() == out.read_bytes()

    def test_replay_tampered_log_integrity_error(self, tmp_path):
        runner = CliRunner()
        ckpt = self.checkpoint(tmp_path)
        ref = self.reference(tmp_path)
        out = tmp_path / "painted.ppm"
        runner.invoke(main, [
            "paint", "--checkpoint", str(ckpt), "--reference", str(ref),
            "--out", str(out), "--strokes", "20", "--patch", "8",
        ])
        log_path = out.with_suffix(".strokes.json")
        log = json.loads(log_path.read_text())
        log["canvas_hash"] = "0" * 64
        log_path.write_text(json.dumps(log))
        result = runner.invoke(main, [
            "replay", "--log", str(log_path), "--out", str(tmp_path / "x.ppm"),
        ])
        assert result.exit_code == EXIT_INTEGRITY

    def test_paint_missing_reference_io_error(self, tmp_path):
        runner = CliRunner()
        ckpt = self.checkpoint(tmp_path)
        result = runner.invoke(main, [
            "paint", "--checkpoint", str(ckpt),
            "--reference", str(tmp_path / "missing.ppm"),
            "--out", str(tmp_path / "o.ppm"), "--patch", "8",
        ])
        assert result.exit_code == EXIT_IO


class TestBenchCommand:
    def test_table_shape_and_determinism(self, tmp_path):
        runner = CliRunner()
        path = tiny_config(tmp_path)
        result = runner.invoke(main, ["bench", "--config", str(path)])
        assert result.exit_code == 0, result.output
        table = (tmp_path / "out" / "bench_table.csv").read_text()
        lines = table.strip().splitlines()
        assert lines[0] == "scheme,benchmark1_random,benchmark2_blank"
        assert len(lines) == 4  # header + 3 schemes
        summary = json.loads((tmp_path / "out" / "bench_summary.json").read_text())
        assert set(summary) == {"rl_only", "ssl_only", "combined"}

        result = runner.invoke(main, ["bench", "--config", str(path)])
        assert result.exit_code == 0
        assert (tmp_path / "out" / "bench_table.csv").read_text() == table
