"""File-format and CLI tests: containers, configs, masks, and subcommands."""

import json

import numpy as np
import pytest

from trfd import (add_noise, cli_main, generate_mask, load_png,
                  load_pointcloud, load_task_config, load_tensor, save_png,
                  save_pointcloud, save_tensor)
from trfd.errors import ConfigError, FormatError, RangeError


class TestTensorContainer:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 7, 2))
        path = tmp_path / "x.rten"
        save_tensor(x, path)
        back = load_tensor(path)
        assert back.shape == x.shape
        assert np.array_equal(back, x)  # exact, including signed zeros / subnormals

    def test_scalar_promoted_to_vector(self, tmp_path):
        path = tmp_path / "s.rten"
        save_tensor(np.float64(4.25), path)
        assert np.array_equal(load_tensor(path), [4.25])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.rten"
        path.write_bytes(b"XXXX" + b"\0" * 20)
        with pytest.raises(FormatError):
            load_tensor(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "t.rten"
        save_tensor(np.ones((4, 4)), path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_tensor(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "t.rten"
        save_tensor(np.ones(3), path)
        path.write_bytes(path.read_bytes() + b"\x01")
        with pytest.raises(FormatError):
            load_tensor(path)


class TestPNG:
    def test_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.random((12, 15, 3))
        path = tmp_path / "img.png"
        save_png(x, path)
        back = load_png(path)
        assert back.shape == x.shape
        assert np.max(np.abs(back - x)) <= 0.5 / 255 + 1e-12

    def test_grayscale_roundtrip(self, tmp_path):
        x = np.linspace(0, 1, 256).reshape(16, 16)
        path = tmp_path / "g.png"
        save_png(x, path)
        assert np.max(np.abs(load_png(path) - x)) <= 0.5 / 255 + 1e-12

    def test_out_of_range_clamped(self, tmp_path):
        x = np.array([[-1.0, 2.0]] * 12)[:, [0, 1] * 6]
        path = tmp_path / "c.png"
        save_png(x, path)
        back = load_png(path)
        assert back.min() == 0.0 and back.max() == 1.0


class TestPointCloud:
    def test_normalization_and_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        raw = rng.uniform(-5, 12, size=(40, 4))
        values = rng.standard_normal(40)
        src = tmp_path / "in.txt"
        src.write_text("\n".join(
            " ".join(repr(float(v)) for v in (*row, s))
            for row, s in zip(raw, values)) + "\n")
        points = load_pointcloud(src)
        assert points.coords.min() >= -1.0 - 1e-12
        assert points.coords.max() <= 1.0 + 1e-12
        np.testing.assert_allclose(points.denormalize(points.coords), raw,
                                   atol=1e-9)
        out = tmp_path / "out.txt"
        save_pointcloud(points, points.values, out)
        again = load_pointcloud(out)
        np.testing.assert_allclose(again.coords, points.coords, atol=1e-9)
        np.testing.assert_allclose(again.values, values, atol=1e-12)

    def test_constant_column_maps_to_zero(self, tmp_path):
        src = tmp_path / "flat.txt"
        src.write_text("1 2 3 7 0.5\n4 5 6 7 0.25\n")
        points = load_pointcloud(src)
        np.testing.assert_array_equal(points.coords[:, 3], [0.0, 0.0])

    def test_parse_error_cites_line(self, tmp_path):
        src = tmp_path / "bad.txt"
        src.write_text("1 2 3 4 5\n1 2 3\n")
        with pytest.raises(FormatError, match=r"bad\.txt:2"):
            load_pointcloud(src)

    def test_empty_file_rejected(self, tmp_path):
        src = tmp_path / "empty.txt"
        src.write_text("# only a comment\n")
        with pytest.raises(FormatError):
            load_pointcloud(src)


class TestMaskAndNoise:
    def test_mask_is_binary_and_seeded(self):
        a = generate_mask((20, 20, 3), 0.3, 5)
        b = generate_mask((20, 20, 3), 0.3, 5)
        assert np.array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 1.0}

    def test_sampling_ratio_within_3_sigma(self):
        n = 100 * 100 * 3
        sr = 0.25
        mask = generate_mask((100, 100, 3), sr, 0)
        se = np.sqrt(sr * (1 - sr) / n)
        assert abs(mask.mean() - sr) < 3 * se

    def test_invalid_ratio(self):
        with pytest.raises(RangeError):
            generate_mask((4, 4), 1.5, 0)

    def test_noise_statistics(self):
        x = np.zeros((200, 200))
        noisy = add_noise(x, 0.1, 3)
        assert abs(noisy.std() - 0.1) / 0.1 < 0.02
        assert not np.array_equal(noisy, x)

    def test_noise_unclipped_and_seeded(self):
        x = np.zeros((50, 50))
        a = add_noise(x, 1.0, 9)
        assert np.array_equal(a, add_noise(x, 1.0, 9))
        assert a.min() < 0  # no clipping to [0, 1]

    def test_zero_sd_is_identity(self):
        x = np.random.default_rng(0).random((5, 5))
        assert np.array_equal(add_noise(x, 0.0, 0), x)


class TestTaskConfig:
    def write(self, tmp_path, obj):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(obj))
        return path

    def base(self):
        return {"task": "denoise", "observation": "obs.rten",
                "output_dir": "out"}

    def test_minimal_config_accepted(self, tmp_path):
        cfg = load_task_config(self.write(tmp_path, self.base()))
        assert cfg["task"] == "denoise"

    def test_unknown_key_rejected(self, tmp_path):
        obj = self.base()
        obj["learning_rate"] = 0.1
        with pytest.raises(ConfigError, match="learning_rate"):
            load_task_config(self.write(tmp_path, obj))

    def test_all_problems_reported_at_once(self, tmp_path):
        obj = {"task": "inpaint", "beta": "ten", "bogus": 1}
        with pytest.raises(ConfigError) as err:
            load_task_config(self.write(tmp_path, obj))
        msg = str(err.value)
        assert "bogus" in msg and "beta" in msg
        assert "observation" in msg and "mask" in msg

    def test_inpaint_requires_mask(self, tmp_path):
        obj = self.base()
        obj["task"] = "inpaint"
        with pytest.raises(ConfigError, match="mask"):
            load_task_config(self.write(tmp_path, obj))

    def test_superres_requires_scale(self, tmp_path):
        obj = self.base()
        obj["task"] = "superres"
        with pytest.raises(ConfigError, match="scale"):
            load_task_config(self.write(tmp_path, obj))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_task_config(path)


def run_inpaint_setup(tmp_path, seed=0, iterations=40):
    """A small self-contained inpainting job; returns the config path."""
    rng = np.random.default_rng(7)
    gt = rng.random((8, 8, 3))
    save_tensor(gt, tmp_path / "gt.rten")
    save_tensor(generate_mask((8, 8, 3), 0.6, 1), tmp_path / "mask.rten")
    cfg = {"task": "inpaint", "observation": str(tmp_path / "gt.rten"),
           "mask": str(tmp_path / "mask.rten"),
           "ground_truth": str(tmp_path / "gt.rten"),
           "output_dir": str(tmp_path / "out"),
           "ranks": [2, 2, 2], "beta": 2, "omega0": 30.0,
           "layers": [1, 1, 1], "hidden": 8, "iterations": iterations,
           "eval_every": 20, "seed": seed}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


class TestCLI:
    def test_inpaint_end_to_end(self, tmp_path, capsys):
        cfg = run_inpaint_setup(tmp_path)
        assert cli_main(["inpaint", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        recon = load_tensor(out / "reconstruction.rten")
        assert recon.shape == (8, 8, 3)
        metrics = json.loads((out / "metrics.json").read_text())
        assert "psnr" in metrics and np.isfinite(metrics["final_loss"])
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "iter,loss,psnr"
        assert (out / "model.rtrf").exists()

    def test_determinism_byte_identical(self, tmp_path):
        cfg = run_inpaint_setup(tmp_path, iterations=30)
        assert cli_main(["inpaint", "--config", str(cfg)]) == 0
        first = (tmp_path / "out" / "reconstruction.rten").read_bytes()
        first_ckpt = (tmp_path / "out" / "model.rtrf").read_bytes()
        assert cli_main(["inpaint", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "reconstruction.rten").read_bytes() == first
        assert (tmp_path / "out" / "model.rtrf").read_bytes() == first_ckpt

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"task": "inpaint"}))
        assert cli_main(["inpaint", "--config", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_wrong_subcommand_for_task(self, tmp_path):
        cfg = run_inpaint_setup(tmp_path)
        assert cli_main(["denoise", "--config", str(cfg)]) == 2

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        cfg = {"task": "denoise", "observation": str(tmp_path / "missing.rten"),
               "output_dir": str(tmp_path / "out")}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert cli_main(["denoise", "--config", str(path)]) == 3

    def test_eval_self_comparison_prints_inf(self, tmp_path, capsys):
        x = np.random.default_rng(0).random((16, 16, 3))
        save_tensor(x, tmp_path / "a.rten")
        assert cli_main(["eval", str(tmp_path / "a.rten"),
                         str(tmp_path / "a.rten")]) == 0
        out = capsys.readouterr().out
        assert "PSNR: Inf" in out
        assert "SSIM: 1.000" in out

    def test_gen_mask_and_info(self, tmp_path, capsys):
        mask_path = tmp_path / "m.rten"
        assert cli_main(["gen-mask", "--shape", "10,10,3", "--sr", "0.4",
                         "--seed", "2", "--out", str(mask_path)]) == 0
        mask = load_tensor(mask_path)
        assert mask.shape == (10, 10, 3)
        assert cli_main(["info", str(mask_path)]) == 0
        assert "RTEN tensor" in capsys.readouterr().out

    def test_analyze_variance(self, tmp_path, capsys):
        out = tmp_path / "reports"
        assert cli_main(["analyze", "--variance", "--r", "4", "--R", "40",
                         "--trials", "50000", "--out", str(out)]) == 0
        payload = json.loads((out / "variance_report.json").read_text())
        assert payload["forward_ok"] is True

    def test_analyze_without_flags_is_config_error(self, tmp_path):
        assert cli_main(["analyze", "--out", str(tmp_path)]) == 2

    def test_pointcloud_end_to_end(self, tmp_path):
        rng = np.random.default_rng(4)
        raw = rng.uniform(0, 10, size=(60, 4))
        values = np.sin(raw[:, 0])
        src = tmp_path / "pts.txt"
        src.write_text("\n".join(
            " ".join(repr(float(v)) for v in (*row, s))
            for row, s in zip(raw, values)) + "\n")
        cfg = {"task": "pointcloud", "observation": str(src),
               "output_dir": str(tmp_path / "out"), "ranks": [2, 2, 2, 2],
               "beta": 2, "omega0": 30.0, "layers": [1, 1, 1, 1], "hidden": 8,
               "iterations": 20, "seed": 0}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert cli_main(["pointcloud", "--config", str(path)]) == 0
        recovered = load_pointcloud(tmp_path / "out" / "reconstruction.txt")
        assert len(recovered.values) == 60
