import re
import subprocess
import sys

import pytest

from conftest import tiny_config_text
from cxv.cli import main
from cxv.config import parse_config


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    m = re.fullmatch(r"error: ([a-z.]+): (.+)", err[0])
    assert m, err
    return m.group(1)


class TestProfile:
    def test_default_model(self, tmp_path, capsys):
        assert main(["profile", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        total = re.search(r"^total\s+([\d,]+)\s+([\d,]+)$", out, re.M)
        params = int(total.group(1).replace(",", ""))
        assert 1.1e6 <= params <= 1.5e6

    def test_echoes_resolved_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("model.name=cpv-2/2\n")
        assert main(["profile", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
        resolved = parse_config((tmp_path / "o" / "config.resolved.txt").read_text())
        assert resolved["model.name"] == "cpv-2/2" and resolved["seed"] == 3
        assert resolved["optim.lr"] == 1e-3


class TestErrors:
    def test_missing_checkpoint(self, tmp_path, capsys):
        code = main(["eval", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "missing.ckpt")])
        assert code != 0 and error_line(capsys) == "io.checkpoint"

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("dualopt.patience=0\n")
        assert main(["profile", "--config", str(cfg), "--out", str(tmp_path)]) != 0
        assert error_line(capsys) == "config"

    @pytest.mark.parametrize("argv", [[], ["bogus"], ["eval"], ["profile", "--precision", "f16"]])
    def test_usage(self, argv, capsys):
        assert main(argv) != 0
        assert error_line(capsys) == "usage"

    def test_missing_dataset(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("CXV_DATA_DIR", raising=False)
        assert main(["train", "--out", str(tmp_path)]) != 0
        assert error_line(capsys) == "io.data"


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, synthetic_dir, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(tiny_config_text(synthetic_dir))
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out), "--epochs", "1", "--precision", "f64"]) == 0
        assert (out / "metrics.csv").is_file() and (out / "config.resolved.txt").is_file()
        capsys.readouterr()
        assert main(["eval", "--config", str(cfg), "--out", str(out), "--checkpoint", str(out / "best.ckpt"),
                     "--precision", "f64"]) == 0
        assert re.fullmatch(r"top1 \d\.\d{4}", capsys.readouterr().out.strip())

    def test_env_dataset_fallback(self, tmp_path, synthetic_dir, monkeypatch):
        monkeypatch.setenv("CXV_DATA_DIR", str(synthetic_dir))
        cfg = tmp_path / "c.cfg"
        cfg.write_text(tiny_config_text("").replace("data.dir=\n", ""))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--epochs", "1"]) == 0


def test_selftest_exits_zero(tmp_path, capsys):
    assert main(["selftest", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "passed" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cxv", "eval", "--out", str(tmp_path), "--checkpoint", "/nonexistent"],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert proc.stderr.startswith("error: io.checkpoint: ")
