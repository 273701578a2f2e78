import json
import subprocess
import sys

import pytest

from tracklearn import config as config_mod
from tracklearn.cli import main
from tracklearn.errors import ConfigError
from tracklearn.harness import EXIT_LOAD_ERROR, EXIT_NONCOMPLETION, EXIT_OK
from tracklearn.learn.sac import SacAgent, SacConfig, save_checkpoint
from tracklearn.env import OBS_CHANNELS

TINY = {"sac": {"actor_hidden": [8, 8], "critic_hidden": [8, 8], "batch_size": 16, "warmup_steps": 100,
                "buffer_size": 5000},
        "paths": {"n_train": 2, "n_eval": 2, "n_reallog_train": 1, "n_reallog_eval": 1,
                  "duration_range": [10.0, 12.0]},
        "train": {"phase1_steps": 200, "phase2_steps": 100, "eval_every": 100, "eval_scenarios": 1,
                  "stop_on_plateau": False},
        "env": {"max_steps": 150}}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY))
    return path


class TestConfig:
    def test_defaults_roundtrip(self):
        cfg = config_mod.load()
        assert config_mod.from_dict(json.loads(config_mod.dumps(cfg))) == cfg
        assert cfg.harness.init_deviations == (-1.25, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)

    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError) as exc:
            config_mod.from_dict({"sac": {"gama": 0.9}})
        assert exc.value.key_path == "sac.gama"

    @pytest.mark.parametrize("data,key", [({"seed": "x"}, "seed"), ({"sac": {"gamma": True}}, "sac.gamma"),
                                          ({"harness": {"tier": "XX"}}, "harness.tier"),
                                          ({"schema_version": 7}, "schema_version"),
                                          ({"sac": {"obs_dim": 10}}, "sac.obs_dim"),
                                          ({"train": {"variant": "nope"}}, "train.variant")])
    def test_rejections(self, data, key):
        with pytest.raises(ConfigError) as exc:
            config_mod.from_dict(data)
        assert exc.value.key_path == key

    def test_seed_precedence(self, cfg_file):
        data = json.loads(cfg_file.read_text())
        data["seed"] = 1
        cfg_file.write_text(json.dumps(data))
        assert config_mod.load(cfg_file, environ={}).seed == 1
        assert config_mod.load(cfg_file, environ={"TRACKLEARN_SEED": "5"}).seed == 5
        with pytest.raises(ConfigError):
            config_mod.load(cfg_file, environ={"TRACKLEARN_SEED": "five"})

    def test_dotted_overrides(self):
        cfg = config_mod.load(overrides={"sac.gamma": 0.5, "train.variant": "SAC-ST-VD"}, environ={})
        assert cfg.sac.gamma == 0.5 and config_mod.to_train_config(cfg).variant == "SAC-ST-VD"

    def test_bad_files(self, tmp_path):
        (tmp_path / "a.json").write_text("{nope")
        with pytest.raises(ConfigError):
            config_mod.load(tmp_path / "a.json")
        with pytest.raises(ConfigError):
            config_mod.load(tmp_path / "missing.json")


class TestCli:
    def test_end_to_end(self, tmp_path, cfg_file, capsys, monkeypatch):
        monkeypatch.delenv("TRACKLEARN_SEED", raising=False)
        data, run = tmp_path / "data", tmp_path / "run"
        assert main(["generate-paths", "--config", str(cfg_file), "--out", str(data)]) == EXIT_OK
        assert (data / "manifest.json").exists() and (data / "stamp.json").exists()

        assert main(["train", "--config", str(cfg_file), "--data", str(data), "--out", str(run),
                     "--variant", "SAC-ST-RW", "--seed", "3"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "phase 2: best eval reward" in out
        assert json.loads((run / "stamp.json").read_text())["seed"] == 3
        assert config_mod.load(run / "config.resolved").seed == 3

        ev = tmp_path / "eval"
        code = main(["evaluate", "--config", str(cfg_file), "--data", str(data), "--out", str(ev),
                     "--checkpoint", f"rw={run / 'best.npz'}", "--tier", "both", "--deviations", "0,0.5"])
        assert code in (EXIT_OK, EXIT_NONCOMPLETION)
        for sub in ("ST", "HF"):
            assert (ev / sub / "summary.csv").exists() and (ev / sub / "metrics.json").exists()
        assert (ev / "gap_ratios.csv").exists()

        rep = tmp_path / "report"
        main(["report", str(ev / "ST" / "metrics.json"), str(ev / "HF" / "metrics.json"), "--out", str(rep)])
        header, *rows = (rep / "summary.csv").read_text().splitlines()
        assert sorted(r.split(",")[0] for r in rows) == ["rw", "rw@HF"]

    def test_interrupt_and_resume(self, tmp_path, cfg_file, monkeypatch):
        monkeypatch.delenv("TRACKLEARN_SEED", raising=False)
        data, run = tmp_path / "data", tmp_path / "run"
        main(["generate-paths", "--config", str(cfg_file), "--out", str(data)])
        args = ["train", "--config", str(cfg_file), "--data", str(data), "--out", str(run), "--variant", "SAC-ST-VD"]
        assert main(args + ["--stop-after-evals", "1"]) == EXIT_OK
        assert not (run / "best.npz").exists()
        # the pickled trainer carries its scenarios, so --data is optional here
        resume = ["train", "--config", str(cfg_file), "--out", str(run), "--variant", "SAC-ST-VD"]
        assert main(resume + ["--resume", str(run)]) == EXIT_OK
        assert (run / "best.npz").exists()
        assert main(args + ["--resume", str(run), "--seed", "9"]) == 4

    def test_exit_codes(self, tmp_path, cfg_file, capsys):
        assert main(["train", "--config", str(cfg_file)]) == 4
        assert main(["train", "--set", "sac.gamma=oops", "--data", "x"]) == 4
        assert main(["evaluate", "--data", str(tmp_path), "--checkpoint", "a=missing.npz"]) == EXIT_LOAD_ERROR
        assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == EXIT_LOAD_ERROR
        assert main(["report", str(tmp_path / "none.json"), "--out", str(tmp_path / "r")]) == EXIT_LOAD_ERROR
        assert "load error" in capsys.readouterr().err

    def test_layout_mismatch_is_load_error(self, tmp_path, cfg_file, capsys):
        data = tmp_path / "data"
        main(["generate-paths", "--config", str(cfg_file), "--out", str(data)])
        bad = list(OBS_CHANNELS)[::-1]
        save_checkpoint(SacAgent(SacConfig()), tmp_path / "old.npz", bad)
        code = main(["evaluate", "--config", str(cfg_file), "--data", str(data), "--out", str(tmp_path / "e"),
                     "--checkpoint", f"old={tmp_path / 'old.npz'}"])
        assert code == EXIT_LOAD_ERROR
        assert "reordered" in capsys.readouterr().err

    def test_dry_run(self, cfg_file, capsys):
        assert main(["train", "--config", str(cfg_file), "--data", "somewhere", "--dry-run"]) == EXIT_OK
        assert "configuration valid" in capsys.readouterr().out

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "tracklearn", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("tracklearn ")
