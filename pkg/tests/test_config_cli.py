import csv
import json
import math
from dataclasses import fields

import numpy as np
import pytest
from PIL import Image

from layered_jscc.cli import build_parser, main, parse_snrs, run_lock, LockError
from layered_jscc.config import (SECTIONS, ConfigError, ExperimentConfig, dump_config, from_dict,
                                 load_config)
from layered_jscc.evaluation import read_results_csv

from conftest import needs_cifar

SMALL = """\
schema_version: 1
scheme:
  name: sr_multi
plan:
  depths: [2, 2]
channel:
  snr_db: 10
training:
  epochs: 1
  batch_size: 16
  lr: 1e-3
  val_fraction: 0.0
  max_batches: 2
evaluation:
  n_images: 8
  realizations: 1
  batch_size: 8
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfig:
    def test_unknown_key_names_line(self, tmp_path):
        p = _write(tmp_path, "training:\n  epochs: 3\n  lr_sched: cosine\n")
        with pytest.raises(ConfigError, match=r"cfg.yaml:3: unknown key training.lr_sched"):
            load_config(p)

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError, match="optimizer"):
            load_config(_write(tmp_path, "optimizer:\n  lr: 1\n"))

    def test_bad_version(self):
        with pytest.raises(ConfigError):
            from_dict({"schema_version": 7})

    def test_invalid_value_reported(self, tmp_path):
        with pytest.raises(ConfigError, match="cfg.yaml:1"):
            load_config(_write(tmp_path, "training:\n  batch_size: 0\n"))

    def test_exponent_floats(self, tmp_path):
        cfg = load_config(_write(tmp_path, SMALL))
        assert cfg.training.lr == 1e-3 and isinstance(cfg.training.lr, float)

    def test_dump_roundtrip(self, tmp_path):
        cfg = load_config(_write(tmp_path, SMALL))
        again = load_config(_write(tmp_path, dump_config(cfg), "again.yaml"))
        assert again == cfg

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.evaluation.realizations == 10
        assert cfg.sweep.train_snrs == [0, 5, 10, 15, 19]
        assert cfg.evaluation.snrs == list(range(20))


class TestFlags:
    @pytest.mark.parametrize("command", ["train", "evaluate", "sweep", "baseline"])
    def test_one_flag_per_key(self, command):
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices[command]
        dests = {a.dest for a in sub._actions if a.dest.startswith("cfg__")}
        keys = {f"cfg__{s}__{f.name}" for s, fac in SECTIONS.items() for f in fields(fac())}
        assert dests == keys
        text = sub.format_help()
        for k in keys:
            _, s, name = k.split("__")
            assert f"--{s}.{name}" in text

    def test_override_parsing(self):
        args = build_parser().parse_args(["train", "--run-dir", "x", "--channel.snr_db", "inf",
                                          "--plan.depths", "[4, 4, 4]", "--training.lr", "5e-4"])
        from layered_jscc.cli import _config
        cfg = _config(args)
        assert math.isinf(cfg.channel.snr_db)
        assert cfg.plan.depths == [4, 4, 4] and cfg.training.lr == 5e-4

    def test_bad_override(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as e:
            main(["train", "--run-dir", str(tmp_path), "--training.nope", "1"])
        assert e.value.code == 2 and "training.nope" in capsys.readouterr().err

    @pytest.mark.parametrize("text,expected", [
        ("0:3", [0.0, 1.0, 2.0, 3.0]), ("0:19:5", [0.0, 5.0, 10.0, 15.0]), ("1, 5,10", [1.0, 5.0, 10.0]),
        ([2, 4], [2.0, 4.0])])
    def test_snr_lists(self, text, expected):
        assert parse_snrs(text) == expected


def test_lockfile(tmp_path):
    with run_lock(tmp_path):
        assert (tmp_path / ".lock").exists()
        with pytest.raises(LockError):
            with run_lock(tmp_path):
                pass
    assert not (tmp_path / ".lock").exists()


def test_missing_checkpoint(tmp_path, capsys):
    code = main(["evaluate", "--checkpoint", str(tmp_path / "none.pt"), "--run-dir", str(tmp_path)])
    assert code != 0
    assert "none.pt" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    if needs_cifar.args[0]:
        pytest.skip("CIFAR-10 not available")
    root = tmp_path_factory.mktemp("run")
    cfg = _write(root, SMALL)
    assert main(["train", "--config", str(cfg), "--run-dir", str(root / "run")]) == 0
    return root, cfg


@needs_cifar
class TestCommands:
    def test_train_writes_manifest(self, trained_run):
        root, _ = trained_run
        m = json.loads((root / "run" / "manifest.json").read_text())
        assert m["status"] == "finished"
        assert m["config"]["plan"]["depths"] == [2, 2]
        assert (root / "run" / m["checkpoint"]).exists()
        assert (root / "run" / "config.yaml").exists()

    def test_resume_continues_epochs(self, trained_run, tmp_path):
        root, cfg = trained_run
        code = main(["train", "--config", str(cfg), "--run-dir", str(root / "run"),
                     "--training.epochs", "2", "--resume"])
        assert code == 0
        m = json.loads((root / "run" / "manifest.json").read_text())
        assert [r["epoch"] for r in m["epochs"]] == [1, 2]

    def test_evaluate_shape_and_repeatability(self, trained_run, tmp_path):
        root, cfg = trained_run
        ckpt = root / "run" / "checkpoints" / "model.pt"
        outs = []
        for d in ("a", "b"):
            assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ckpt),
                         "--run-dir", str(tmp_path / d), "--snrs", "0:19"]) == 0
            outs.append((tmp_path / d / "results.csv").read_bytes())
        rows = read_results_csv(tmp_path / "a" / "results.csv")
        assert len(rows) == 2 * 20
        assert {r["subset"] for r in rows} == {"01", "11"}
        assert outs[0] == outs[1]
        assert (tmp_path / "a" / "plots" / "psnr_vs_snr.png").exists()

    def test_evaluate_refuses_locked_dir(self, trained_run, tmp_path):
        root, cfg = trained_run
        (tmp_path / ".lock").write_text("1")
        code = main(["evaluate", "--config", str(cfg), "--checkpoint",
                     str(root / "run" / "checkpoints" / "model.pt"), "--run-dir", str(tmp_path)])
        assert code == 2

    def test_transmit_pads_and_repeats(self, trained_run, tmp_path, rng):
        root, _ = trained_run
        img = tmp_path / "pic.png"
        Image.fromarray(rng.integers(0, 256, (30, 29, 3), dtype=np.uint8)).save(img)
        ckpt = str(root / "run" / "checkpoints" / "model.pt")
        files = []
        for d in ("a", "b"):
            assert main(["transmit", str(img), "--checkpoint", ckpt, "--snr", "5", "--keep", "1",
                         "--keep", "2", "--seed", "3", "--out-dir", str(tmp_path / d)]) == 0
            files.append({p.name: p.read_bytes() for p in (tmp_path / d).glob("*.png")})
        assert sorted(files[0]) == ["pic_01.png", "pic_11.png"]
        assert files[0] == files[1]
        out = np.asarray(Image.open(tmp_path / "a" / "pic_11.png"))
        assert out.shape == (30, 29, 3)
        report = json.loads((tmp_path / "a" / "transmit.json").read_text())
        assert set(report) == {"01", "11"}

    def test_mismatch_sweep_rows(self, trained_run, tmp_path):
        _, cfg = trained_run
        code = main(["sweep", "--config", str(cfg), "--kind", "mismatch", "--run-dir", str(tmp_path),
                     "--sweep.train_snrs", "[0, 10]", "--sweep.test_snrs", "[0, 5, 19]",
                     "--sweep.train_missing", "true"])
        assert code == 0
        assert len(read_results_csv(tmp_path / "results.csv")) == 2 * 3 * 2
        assert len(read_results_csv(tmp_path / "envelope.csv")) == 3 * 2
        assert (tmp_path / "plots" / "mismatch.png").exists()

    def test_tradeoff_sweep_from_checkpoints(self, trained_run, tmp_path):
        root, cfg = trained_run
        ckpt = str(root / "run" / "checkpoints" / "model.pt")
        code = main(["sweep", "--config", str(cfg), "--kind", "tradeoff_lambda", "--run-dir", str(tmp_path),
                     "--sweep.grid", "[0.5]", "--sweep.checkpoints", json.dumps({"0.5": ckpt})])
        assert code == 0
        rows = read_results_csv(tmp_path / "results.csv")
        assert [r["weight"] for r in rows] == [0.5, 0.5]

    def test_sweep_without_checkpoint(self, trained_run, tmp_path):
        _, cfg = trained_run
        code = main(["sweep", "--config", str(cfg), "--kind", "tradeoff_alpha1",
                     "--run-dir", str(tmp_path), "--sweep.grid", "[0.3]"])
        assert code == 2

    def test_baseline_and_plot(self, tmp_path):
        code = main(["baseline", "--run-dir", str(tmp_path), "--baseline.n_images", "2",
                     "--baseline.snrs", "[1, 19]"])
        assert code == 0
        with open(tmp_path / "results.csv") as f:
            rows = list(csv.DictReader(ln for ln in f if not ln.startswith("#")))
        assert len(rows) == 2 * 2
        assert all(int(float(r["max_payload_bits"])) <= int(float(r["budget_bits"])) for r in rows)
        out = tmp_path / "again.png"
        assert main(["plot", str(tmp_path / "results.csv"), "--kind", "baseline", "--out", str(out)]) == 0
        assert out.exists()

    def test_bpg_unavailable_exit_code(self, tmp_path):
        from layered_jscc.baselines import FeatureUnavailable, bpg_tools
        try:
            bpg_tools()
            pytest.skip("BPG tools installed")
        except FeatureUnavailable:
            pass
        code = main(["baseline", "--run-dir", str(tmp_path), "--baseline.codec", "bpg_independent",
                     "--baseline.n_images", "1"])
        assert code == 3
