"""Command line behavior: config layering, manifests, outputs, exit codes."""

import argparse
import json

import numpy as np
import pytest

from mwdcnn.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, CliError,
                        RunManifest, _noise_key, _resolve_config, main,
                        version_string)


def _ns(**kw):
    base = dict(config=None, seed=None)
    base.update(kw)
    return argparse.Namespace(**base)


def write_pgm(path, pixels):
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.astype(np.uint8).tobytes())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Three small gray training images plus one odd-sized extra."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    data.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        ramp = np.linspace(40 + 20 * i, 200, 24)[:, None] * np.ones((1, 24))
        write_pgm(data / f"img{i}.pgm", ramp + rng.integers(0, 20, (24, 24)))
    write_pgm(root / "odd.pgm", np.tile(np.linspace(0, 255, 17), (17, 1)))
    return root


TRAIN_ARGS = ["--patches", "8", "--patch-size", "16", "--base-channels", "4",
              "--kernel-size", "3", "--epochs", "2", "--batch", "4", "--seed", "0"]


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "run1"
    code = main(["train", "--data", str(workspace / "data"), *TRAIN_ARGS,
                 "--out", str(out)])
    assert code == EXIT_OK
    return out


class TestConfigResolution:
    def test_defaults_when_nothing_given(self):
        cfg, plan = _resolve_config(_ns())
        assert cfg.base_channels == 64 and cfg.kernel_size == 5
        assert plan.batch_size == 64 and plan.epochs == 90

    def test_file_overrides_defaults(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("base_channels = 8\nepochs = 4  # short run\nsigma=15\n")
        cfg, plan = _resolve_config(_ns(config=str(f)))
        assert cfg.base_channels == 8
        assert plan.epochs == 4 and plan.sigma == 15.0

    def test_flags_override_file(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("base_channels=8\nepochs=4\n")
        cfg, plan = _resolve_config(_ns(config=str(f), base_channels=16, epochs=2))
        assert cfg.base_channels == 16 and plan.epochs == 2

    def test_seed_feeds_model_and_plan(self):
        cfg, plan = _resolve_config(_ns(seed=123))
        assert cfg.seed == 123 and plan.seed == 123

    def test_blind_flag(self):
        _, plan = _resolve_config(_ns(blind=True))
        assert plan.blind is True

    def test_unknown_key_is_config_error(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("channels=3\n")
        with pytest.raises(CliError) as err:
            _resolve_config(_ns(config=str(f)))
        assert err.value.code == EXIT_CONFIG

    def test_bad_value_is_config_error(self):
        with pytest.raises(CliError) as err:
            _resolve_config(_ns(base_channels=-4))
        assert err.value.code == EXIT_CONFIG

    def test_missing_config_file(self):
        with pytest.raises(CliError) as err:
            _resolve_config(_ns(config="/nonexistent/path.cfg"))
        assert err.value.code == EXIT_CONFIG


class TestNoiseKey:
    def test_packs_seed_high_slots_low(self):
        assert _noise_key(5, 0) == 5 << 32
        assert _noise_key(5, 1, 2) == (5 << 64) | (1 << 32) | 2

    def test_negative_seed_masked_and_bounded(self):
        key = _noise_key(-1, 0xFFFFFFFF, 0xFFFFFFFF)
        assert 0 <= key < 2 ** 128  # Philox keys hold 128 bits


class TestRunManifest:
    def test_atomic_write_and_finish(self, tmp_path):
        m = RunManifest("train", config={"a": 1}, seed=7, outputs={"dir": "x"})
        path = tmp_path / "run_manifest.json"
        m.write(path)
        assert not list(tmp_path.glob("*.tmp"))
        payload = json.loads(path.read_text())
        assert payload["command"] == "train"
        assert payload["seed"] == 7
        assert payload["started"] and payload["ended"] is None
        assert payload["version"]
        m.finish()
        assert json.loads(path.read_text())["ended"] is not None

    def test_version_string_nonempty(self):
        v = version_string()
        assert isinstance(v, str) and v


class TestTrain:
    def test_outputs_land_in_declared_dir(self, workspace, trained):
        names = {p.name for p in trained.iterdir()}
        assert {"run_manifest.json", "train_log.csv", "dataset_manifest.csv",
                "epoch_001.ckpt", "epoch_002.ckpt"} <= names
        payload = json.loads((trained / "run_manifest.json").read_text())
        assert payload["command"] == "train"
        assert payload["ended"] is not None
        assert payload["config"]["model"]["base_channels"] == 4
        assert payload["config"]["train"]["batch_size"] == 4
        log = (trained / "train_log.csv").read_text().splitlines()
        assert log[0] == "iter,epoch,lr,loss"
        assert len(log) == 5  # 8 patches / batch 4 x 2 epochs

    def test_same_seed_reproduces_run_bit_for_bit(self, workspace, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            code = main(["train", "--data", str(workspace / "data"), *TRAIN_ARGS,
                         "--out", str(out)])
            assert code == EXIT_OK
            outs.append(out)
        a, b = outs
        assert (a / "train_log.csv").read_bytes() == (b / "train_log.csv").read_bytes()
        assert (a / "epoch_002.ckpt").read_bytes() == (b / "epoch_002.ckpt").read_bytes()
        assert (a / "dataset_manifest.csv").read_bytes() == \
            (b / "dataset_manifest.csv").read_bytes()

    def test_missing_data_dir_exits_2(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nope"), *TRAIN_ARGS,
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA

    def test_oversized_patch_exits_2(self, workspace, tmp_path):
        code = main(["train", "--data", str(workspace / "data"), "--patches", "4",
                     "--patch-size", "48", "--base-channels", "4",
                     "--kernel-size", "3", "--epochs", "1",
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA

    def test_unknown_config_key_exits_1(self, workspace, tmp_path):
        f = tmp_path / "bad.cfg"
        f.write_text("width=64\n")
        code = main(["train", "--data", str(workspace / "data"), "--config", str(f),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG

    def test_exploding_lr_exits_3(self, workspace, tmp_path):
        f = tmp_path / "hot.cfg"
        f.write_text("lr_table=1-1:1e30\n")
        code = main(["train", "--data", str(workspace / "data"), "--patches", "8",
                     "--patch-size", "16", "--base-channels", "4",
                     "--kernel-size", "3", "--epochs", "1", "--batch", "4",
                     "--config", str(f), "--out", str(tmp_path / "o")])
        assert code == EXIT_NUMERIC


class TestDenoise:
    def test_synthesized_noise_run(self, workspace, trained, tmp_path, capsys):
        out = tmp_path / "den"
        code = main(["denoise", str(workspace / "data" / "img0.pgm"),
                     "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--sigma", "25", "--seed", "1", "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "img0_denoised.pgm").exists()
        assert (out / "run_manifest.json").exists()
        text = capsys.readouterr().out
        assert "noisy    PSNR" in text and "denoised PSNR" in text

    def test_seeded_noise_reproduces(self, workspace, trained, tmp_path):
        blobs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            code = main(["denoise", str(workspace / "data" / "img1.pgm"),
                         "--checkpoint", str(trained / "epoch_002.ckpt"),
                         "--sigma", "25", "--seed", "3", "--out", str(out)])
            assert code == EXIT_OK
            blobs.append((out / "img1_denoised.pgm").read_bytes())
        assert blobs[0] == blobs[1]

    def test_odd_size_preserved(self, workspace, trained, tmp_path):
        from mwdcnn.data import load_image
        out = tmp_path / "den"
        code = main(["denoise", str(workspace / "odd.pgm"),
                     "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--out", str(out)])
        assert code == EXIT_OK
        buf = load_image(out / "odd_denoised.pgm")
        assert (buf.height, buf.width) == (17, 17)

    def test_sigma_with_clean_conflicts(self, workspace, trained, tmp_path):
        code = main(["denoise", str(workspace / "odd.pgm"),
                     "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--sigma", "25", "--clean", str(workspace / "odd.pgm"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG

    def test_garbage_checkpoint_exits_1(self, workspace, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        code = main(["denoise", str(workspace / "odd.pgm"),
                     "--checkpoint", str(bad), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG

    def test_missing_input_exits_2(self, workspace, trained, tmp_path):
        code = main(["denoise", str(workspace / "missing.pgm"),
                     "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA


class TestEval:
    def test_reports_per_sigma(self, workspace, trained, tmp_path, capsys):
        out = tmp_path / "ev"
        code = main(["eval", "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--data", str(workspace / "data"), "--sigma", "15,25",
                     "--out", str(out)])
        assert code == EXIT_OK
        for name in ("eval_sigma15.csv", "eval_sigma25.csv"):
            lines = (out / name).read_text().splitlines()
            assert lines[0] == "image,psnr_db,ssim"
            assert len(lines) == 5  # 3 images + MEAN
            assert lines[-1].startswith("MEAN,")
        assert capsys.readouterr().out.count("mean PSNR") == 2

    def test_rerun_is_deterministic(self, workspace, trained, tmp_path):
        blobs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            code = main(["eval", "--checkpoint", str(trained / "epoch_002.ckpt"),
                         "--data", str(workspace / "data"), "--sigma", "25",
                         "--seed", "5", "--out", str(out)])
            assert code == EXIT_OK
            blobs.append((out / "eval_sigma25.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_bad_sigma_list_exits_1(self, workspace, trained, tmp_path):
        for bad in ("a,b", "-5", ""):
            code = main(["eval", "--checkpoint", str(trained / "epoch_002.ckpt"),
                         "--data", str(workspace / "data"), "--sigma", bad,
                         "--out", str(tmp_path / "o")])
            assert code == EXIT_CONFIG

    def test_empty_data_dir_exits_2(self, trained, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["eval", "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--data", str(empty), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA


class TestGradcheck:
    def test_passes_and_writes_report(self, tmp_path, capsys):
        out = tmp_path / "gc"
        code = main(["gradcheck", "--base-channels", "4", "--seed", "0",
                     "--out", str(out)])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "PASS" in text
        report = (out / "gradcheck_report.txt").read_text()
        assert "PASS" in report
        assert (out / "run_manifest.json").exists()

    def test_config_supplies_width(self, tmp_path, capsys):
        f = tmp_path / "c.cfg"
        f.write_text("base_channels=4\nseed=2\n")
        code = main(["gradcheck", "--config", str(f)])
        assert code == EXIT_OK
        assert "PASS" in capsys.readouterr().out
