import subprocess
import sys

import pytest

from hadamard_cnn import cli, datasets, energy
from hadamard_cnn.errors import ConfigurationError
from hadamard_cnn.models import Hyperparams, ModelSpec, load_config, save_config

from test_datasets import write_mnist


@pytest.mark.parametrize("text,powers,expected", [
    ("3,5,7", False, [3, 5, 7]),
    ("2:5", False, [2, 3, 4, 5]),
    ("4:128", True, [4, 8, 16, 32, 64, 128]),
    ("3:20", True, [4, 8, 16]),
    ("2,8:16", True, [2, 8, 16]),
])
def test_parse_int_range(text, powers, expected):
    assert cli.parse_int_range(text, powers) == expected


@pytest.mark.parametrize("text", ["", "5:2", "a:b", "1,x"])
def test_parse_int_range_errors(text):
    with pytest.raises(ConfigurationError):
        cli.parse_int_range(text)


class TestEnergy:
    def test_single_sweep_csv(self, tmp_path):
        code = cli.main(["energy", "--mode", "single", "--alpha", "4.5", "--kernels", "3,5,7",
                         "--images", "4:128", "--out", str(tmp_path)])
        assert code == 0
        rows = energy.read_sweep_csv((tmp_path / "energy_single.csv").read_text())
        assert len(rows) == 6 * 3
        assert {r["N"] for r in rows} == {4, 8, 16, 32, 64, 128}

    def test_multi_sweep_uses_presets(self, tmp_path):
        assert cli.main(["energy", "--mode", "multi", "--cin", "2:5", "--out", str(tmp_path)]) == 0
        rows = energy.read_sweep_csv((tmp_path / "energy_multi.csv").read_text())
        assert {r["c_in"] for r in rows} == {2, 3, 4, 5}
        assert {r["alpha"] for r in rows} == {2.44, 4.5}

    def test_single_cell_equals_formula(self, tmp_path):
        cli.main(["energy", "--alpha", "2.44", "--kernels", "5", "--images", "16", "--out", str(tmp_path),
                  "--file", "one.csv"])
        (row,) = energy.read_sweep_csv((tmp_path / "one.csv").read_text())
        assert row["ratio"] == energy.ratio_single_channel(16, 5, 2.44)

    def test_empty_range_is_usage_error(self, tmp_path, capsys):
        assert cli.main(["energy", "--images", "64:8", "--out", str(tmp_path / "x")]) == cli.EXIT_USAGE
        assert not (tmp_path / "x").exists()


class TestVerify:
    def test_default_passes(self, capsys):
        assert cli.main(["verify", "--sizes", "2,4,8", "--trials", "5", "--grad-seeds", "2"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 4

    def test_fault_injection_fails_theorem_suite(self, capsys):
        code = cli.main(["verify", "--sizes", "2:16", "--trials", "5", "--grad-seeds", "1",
                         "--inject-fault", "flip-sign"])
        out = capsys.readouterr().out
        assert code == cli.EXIT_FAILURE
        assert "FAIL convolution-theorem" in out

    def test_sizes_restrict_suites(self, capsys):
        cli.main(["verify", "--sizes", "2,4", "--trials", "2", "--grad-seeds", "1"])
        assert "sizes=[2, 4]" in capsys.readouterr().out


class TestTrain:
    def test_zero_epochs_echoes_config(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert cli.main(["train", "--epochs", "0", "--method", "convolution", "--out", str(out),
                         "--data-dir", str(tmp_path / "nowhere")]) == 0
        spec, hp = load_config(out / "config.cfg")
        assert spec.method == "convolution" and hp.epochs == 0
        assert (out / "metrics.csv").read_text() == "epoch,train_loss,train_acc,test_acc,lr\n"
        assert "method=convolution" in capsys.readouterr().out

    def test_missing_data_hint(self, tmp_path, capsys):
        code = cli.main(["train", "--epochs", "1", "--out", str(tmp_path / "r"), "--data-dir", str(tmp_path)])
        assert code == cli.EXIT_UNAVAILABLE
        assert "hadamard-cnn fetch mnist" in capsys.readouterr().err

    @pytest.mark.parametrize("flags", [["--lr", "-1"], ["--method", "fourier"], ["--batch-size", "1"],
                                       ["--kernel-size", "three"], ["--depth", "3", "--features-per-layer", "8"]])
    def test_invalid_config_before_work(self, tmp_path, flags):
        out = tmp_path / "r"
        assert cli.main(["train", *flags, "--out", str(out)]) == cli.EXIT_USAGE
        assert not out.exists()

    def test_config_file_with_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        save_config(cfg, ModelSpec(method="convolution", kernel_size=5), Hyperparams(epochs=0, lr=0.5))
        out = tmp_path / "r"
        assert cli.main(["train", "--config", str(cfg), "--lr", "0.25", "--out", str(out)]) == 0
        spec, hp = load_config(out / "config.cfg")
        assert (spec.method, spec.kernel_size, hp.lr, hp.epochs) == ("convolution", 5, 0.25, 0)

    def test_synthetic_train_eval_deterministic(self, tmp_path, capsys):
        data = tmp_path / "data" / "mnist"
        data.mkdir(parents=True)
        write_mnist(data, n_train=40, n_test=20)
        flags = ["--data-dir", str(tmp_path / "data"), "--epochs", "2", "--batch-size", "8",
                 "--features-per-layer", "4", "--init", "scaled", "--lr", "0.001"]
        for run in ("a", "b"):
            assert cli.main(["train", *flags, "--out", str(tmp_path / run)]) == 0
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
        assert (tmp_path / "a" / "checkpoint.npz").exists()
        assert "final_test_acc" in (tmp_path / "a" / "summary.txt").read_text()
        capsys.readouterr()
        assert cli.main(["eval", *flags, "--out", str(tmp_path / "a")]) == 0
        assert "test accuracy:" in capsys.readouterr().out

    def test_eval_without_checkpoint(self, tmp_path):
        assert cli.main(["eval", "--out", str(tmp_path)]) == cli.EXIT_UNAVAILABLE


class TestFetch:
    def test_populated_dir_is_noop(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setitem(datasets.MANIFESTS, "mnist", datasets.Manifest({"a.gz": "0" * 32}, {"a": 1}))
        (tmp_path / "mnist").mkdir()
        (tmp_path / "mnist" / "a").write_bytes(b"x")
        assert cli.main(["fetch", "mnist", "--data-dir", str(tmp_path)]) == 0
        assert "already present" in capsys.readouterr().out

    def test_bad_mirror(self, tmp_path, monkeypatch):
        monkeypatch.setitem(datasets.MANIFESTS, "mnist", datasets.Manifest({"a.gz": "0" * 32}, {"a": 1}))
        code = cli.main(["fetch", "mnist", "--data-dir", str(tmp_path), "--url", "http://127.0.0.1:9/",
                         "--timeout", "2"])
        assert code == cli.EXIT_UNAVAILABLE

    def test_unknown_dataset(self, tmp_path):
        assert cli.main(["fetch", "svhn", "--data-dir", str(tmp_path)]) == cli.EXIT_USAGE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hadamard_cnn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify" in proc.stdout
