"""Command-line behavior: config merging, exit codes, artifact layouts.

Everything runs through main() on small synthetic data so these double as
end-to-end smoke tests for the console entry point.
"""

import json
import os

import numpy as np
import pytest

from retinotopic.cli import ConfigError, _merge_config, _setup_threads, build_parser, main, parse_config_file
from retinotopic.ppm import read_ppm, write_ppm
from retinotopic.sampler import SamplerParams, default_grid_spec, warp

FAST = ["--saccades", "2", "--patch-size", "16"]


def run_main(argv):
    return main([str(a) for a in argv])


class TestConfigFile:
    def test_key_value_lines(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# comment line\n"
            "lr = 0.005   # trailing comment\n"
            "\n"
            "flip=true\n"
            "dataset=fashion_mnist\n"
        )
        assert parse_config_file(p) == {"lr": "0.005", "flip": "true",
                                        "dataset": "fashion_mnist"}

    def test_json_object(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps({"lr": 0.005, "flip": True}))
        assert parse_config_file(p) == {"lr": 0.005, "flip": True}

    def test_run_json_replay_unwraps_config(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps({"command": "train", "build_id": "x",
                                 "config": {"seed": 7}}))
        assert parse_config_file(p) == {"seed": 7}

    def test_rejects_bare_word(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("epochs\n")
        with pytest.raises(ConfigError, match="key=value"):
            parse_config_file(p)


class TestMergeConfig:
    def test_precedence_defaults_file_cli(self):
        args = build_parser().parse_args(["train", "--lr", "0.02"])
        config, extras = _merge_config(args, {"lr": "0.01", "seed": "9",
                                              "dataset": "cifar10"})
        assert config.lr == 0.02  # CLI beats file
        assert config.seed == 9  # file beats default
        assert config.epochs == 10  # untouched default
        assert extras["dataset"] == "cifar10"

    def test_bool_coercion_from_file(self):
        args = build_parser().parse_args(["train"])
        config, _ = _merge_config(args, {"flip": "yes", "zoom": "off"})
        assert config.flip is True and config.zoom is False

    def test_unknown_key(self):
        args = build_parser().parse_args(["train"])
        with pytest.raises(ConfigError, match="unknown config key"):
            _merge_config(args, {"learning_rate": "0.1"})

    def test_invalid_value_becomes_config_error(self):
        args = build_parser().parse_args(["train", "--margin", "0.5"])
        with pytest.raises(ConfigError):
            _merge_config(args, {})


class TestExitCodes:
    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense_key=1\n")
        assert run_main(["gradcheck", "--config", cfg, "--only", "dense"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file_exits_1(self, tmp_path, capsys):
        assert run_main(["gradcheck", "--config", tmp_path / "absent.cfg"]) == 1
        assert "missing file" in capsys.readouterr().err

    def test_missing_dataset_exits_1(self, tmp_path, capsys):
        code = run_main(["eval", "--data-dir", tmp_path, "--out-dir", tmp_path / "ev",
                         "--limit-eval", "2"] + FAST)
        assert code == 1
        assert "missing file" in capsys.readouterr().err

    def test_gradcheck_unknown_filter_exits_1(self, capsys):
        assert run_main(["gradcheck", "--only", "bogus"]) == 1
        assert "error" in capsys.readouterr().err


class TestThreadSetup:
    def test_deterministic_pins_single_thread(self, monkeypatch):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            monkeypatch.delenv(var, raising=False)
        args = build_parser().parse_args(["train", "--deterministic"])
        _setup_threads(args, {})
        assert os.environ["OMP_NUM_THREADS"] == "1"
        assert os.environ["OPENBLAS_NUM_THREADS"] == "1"

    def test_explicit_thread_count(self, monkeypatch):
        monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
        args = build_parser().parse_args(["train", "--threads", "3"])
        _setup_threads(args, {})
        assert os.environ["OMP_NUM_THREADS"] == "3"


class TestWarpCommand:
    @pytest.fixture
    def photo(self, tmp_path, rng):
        img = (rng.random((3, 40, 48)) * 255).astype(np.uint8)
        path = tmp_path / "pic.ppm"
        write_ppm(path, img)
        return path

    def test_default_output_matches_library_warp(self, tmp_path, photo, rng, capsys):
        assert run_main(["warp", photo, "23.5", "17.0", "--patch-size", "16"]) == 0
        out = photo.parent / "pic_logpolar.ppm"
        assert out.exists()
        assert "wrote" in capsys.readouterr().out

        img = read_ppm(photo).astype(np.float32) / 255.0
        spec = default_grid_spec(40, 48, 16)
        patch = warp(img, SamplerParams((23.5, 17.0), spec))
        expected = tmp_path / "expected.ppm"
        write_ppm(expected, patch)
        assert out.read_bytes() == expected.read_bytes()

    def test_explicit_output_path(self, tmp_path, photo):
        dest = tmp_path / "sub" / "warped.ppm"
        dest.parent.mkdir()
        assert run_main(["warp", photo, "10", "10", "--output", dest,
                         "--patch-size", "8"]) == 0
        assert read_ppm(dest).shape == (3, 8, 8)

    def test_grayscale_input(self, tmp_path, rng):
        path = tmp_path / "gray.ppm"
        write_ppm(path, (rng.random((1, 20, 20)) * 255).astype(np.uint8))
        assert run_main(["warp", path, "9.5", "9.5", "--patch-size", "8"]) == 0
        assert read_ppm(tmp_path / "gray_logpolar.ppm").shape == (1, 8, 8)


class TestGradcheckCommand:
    def test_filtered_run_passes(self, tmp_path, capsys):
        code = run_main(["gradcheck", "--only", "dense", "--out-dir", tmp_path])
        assert code == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert lines and all("PASS" in l and "max rel err" in l for l in lines)
        rows = json.loads((tmp_path / "gradcheck.json").read_text())
        assert all(r["pass"] and r["max_rel_err"] < r["tol"] for r in rows)


class TestTraceCommand:
    def test_artifacts(self, tmp_path, synthetic_data_dir, capsys):
        out = tmp_path / "trace"
        code = run_main(["trace", "--data-dir", synthetic_data_dir, "--out-dir", out,
                         "--index", "3", "--seed", "1"] + FAST)
        assert code == 0
        assert "predicted" in capsys.readouterr().out

        rows = (out / "trace_centers.csv").read_text().splitlines()
        assert rows[0] == "step,x,y,pred,p_pred"
        assert len(rows) == 1 + 3  # init center + one per saccade
        first = rows[1].split(",")
        assert first[0] == "0" and first[3] == "" and first[4] == ""
        last = rows[-1].split(",")
        assert last[3] != "" and 0 <= int(last[3]) <= 9
        assert 0.0 < float(last[4]) <= 1.0

        for k in range(2):
            assert read_ppm(out / f"patch_{k}.ppm").shape == (1, 16, 16)
        assert read_ppm(out / "overlay.ppm").shape == (3, 28, 28)
        run = json.loads((out / "run.json").read_text())
        assert run["command"] == "trace" and run["config"]["saccades"] == 2

    def test_bad_index_exits_1(self, tmp_path, synthetic_data_dir, capsys):
        code = run_main(["trace", "--data-dir", synthetic_data_dir,
                         "--out-dir", tmp_path / "t", "--index", "99999"] + FAST)
        assert code == 1
        assert "out of range" in capsys.readouterr().err


TRAIN_FAST = FAST + ["--batch-size", "8", "--limit-train", "16", "--limit-eval", "8",
                     "--deterministic", "--seed", "5"]


class TestTrainEvalCommands:
    def test_train_then_eval_then_replay(self, tmp_path, synthetic_data_dir, capsys):
        out = tmp_path / "run"
        code = run_main(["train", "--data-dir", synthetic_data_dir, "--out-dir", out,
                         "--epochs", "1"] + TRAIN_FAST)
        assert code == 0
        for name in ("run.json", "metrics.csv", "epoch_1.rtnt", "summary.json"):
            assert (out / name).exists(), name
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,split,task,loss,acc1,acc2"

        ev = tmp_path / "ev"
        code = run_main(["eval", "--data-dir", synthetic_data_dir, "--out-dir", ev,
                         "--checkpoint", out / "epoch_1.rtnt",
                         "--limit-eval", "8"] + FAST)
        assert code == 0
        assert "final-saccade accuracy" in capsys.readouterr().out
        report = json.loads((ev / "eval.json").read_text())
        assert report["n"] == 8 and len(report["accs"]) == 2
        assert report["final_acc"] == report["accs"][-1]

        # a recorded run.json can seed a later command, flags still win
        ev2 = tmp_path / "ev2"
        code = run_main(["eval", "--config", out / "run.json", "--out-dir", ev2,
                         "--checkpoint", out / "epoch_1.rtnt", "--limit-eval", "4"])
        assert code == 0
        assert json.loads((ev2 / "eval.json").read_text())["n"] == 4

    def test_resume_flow(self, tmp_path, synthetic_data_dir, capsys):
        out = tmp_path / "run"
        base = ["--data-dir", synthetic_data_dir, "--out-dir", out] + TRAIN_FAST
        assert run_main(["train", "--epochs", "1"] + base) == 0
        ckpt = out / "epoch_1.rtnt"

        code = run_main(["train", "--epochs", "2", "--resume", ckpt] + base)
        assert code == 0
        assert "resuming after epoch 1" in capsys.readouterr().out
        assert (out / "epoch_2.rtnt").exists()

        # target already reached: refuse rather than silently retrain
        code = run_main(["train", "--epochs", "1", "--resume", ckpt] + base)
        assert code == 1
        assert "nothing to do" in capsys.readouterr().err

    def test_env_var_locates_data(self, tmp_path, synthetic_data_dir, monkeypatch, capsys):
        monkeypatch.setenv("RETINOTOPIC_DATA_DIR", str(synthetic_data_dir))
        code = run_main(["eval", "--out-dir", tmp_path / "ev",
                         "--limit-eval", "4"] + FAST)
        assert code == 0
        assert "no checkpoint" in capsys.readouterr().out
