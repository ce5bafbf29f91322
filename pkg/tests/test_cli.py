import json

import numpy as np
import pytest

from cctvision import cli
from cctvision.data import synth_generate
from cctvision.preprocess import ImageU8, read_png, write_png


TINY_DOC = {
    "seed": 11,
    "model": {"input_channels": 2, "input_size": 16, "conv_blocks": 1,
              "embed_dim": 16, "encoder_layers": 1, "heads": 2,
              "dropout": 0.0, "num_classes": 2, "precision": 32},
    "optimizer": {"lr": 1e-3, "batch_size": 8, "epochs": 1},
    "data": {"kind": "synthetic", "n_per_class": 8, "synth_size": 16,
             "split": [0.75, 0.25, 0.0]},
}


@pytest.fixture()
def tiny_config(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(TINY_DOC))
    return p


@pytest.fixture()
def sample_png(tmp_path):
    ds = synth_generate(1, 16, seed=3)
    p = tmp_path / "img.png"
    write_png(ImageU8(ds.images[1][:, :, None]), p)
    return p


@pytest.fixture()
def dataset_root(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "root"
    for folder, n in (("Normal", 3), ("COVID", 2)):
        d = root / folder
        d.mkdir(parents=True)
        for i in range(n):
            arr = rng.integers(0, 256, (16, 16, 1)).astype(np.uint8)
            write_png(ImageU8(arr), d / f"{folder.lower()}-{i}.png")
    return root


class TestDispatch:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["--help"])
        assert e.value.code == 0

    def test_unknown_subcommand_exit_1(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["frobnicate"])
        assert e.value.code == 1

    def test_unknown_flag_named(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["selftest", "--bogus-flag"])
        assert e.value.code == 1
        assert "--bogus-flag" in capsys.readouterr().err

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["--version"])
        assert e.value.code == 0
        assert "cctvision" in capsys.readouterr().out

    def test_threads_flag_consumed(self):
        argv = cli._apply_threads(["--threads", "2", "selftest"])
        assert argv == ["selftest"]

    def test_threads_rejects_garbage(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli._apply_threads(["--threads", "zero"])
        assert e.value.code == 1

    def test_validation_error_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"sead\": 1}")
        rc = cli.main(["train", "--config", str(bad), "--out-dir", str(tmp_path / "o")])
        assert rc == 1
        assert "unknown config keys" in capsys.readouterr().err


class TestPreprocessCmd:
    def test_preview_and_intermediates(self, tmp_path, tiny_config, sample_png):
        out = tmp_path / "prev.png"
        dump = tmp_path / "stages"
        rc = cli.main(["preprocess", "--image", str(sample_png),
                       "--config", str(tiny_config), "--out", str(out),
                       "--dump-intermediate", str(dump)])
        assert rc == 0
        panel = read_png(out)
        assert panel.height == 16 and panel.width == 32  # two stages side by side
        assert (dump / "img.clahe.png").exists()
        assert (dump / "img.bg.png").exists()

    def test_missing_image_exit_1(self, tmp_path, tiny_config):
        rc = cli.main(["preprocess", "--image", str(tmp_path / "nope.png"),
                       "--config", str(tiny_config),
                       "--out", str(tmp_path / "o.png")])
        assert rc == 1


class TestAugmentPreviewCmd:
    def test_writes_count_files(self, tmp_path, tiny_config, sample_png):
        out = tmp_path / "aug"
        rc = cli.main(["augment-preview", "--image", str(sample_png),
                       "--config", str(tiny_config), "--count", "3",
                       "--out-dir", str(out)])
        assert rc == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "img.aug000.png", "img.aug001.png", "img.aug002.png"]


class TestDatasetCmd:
    def test_scan_then_split(self, tmp_path, dataset_root):
        manifest = tmp_path / "manifest.json"
        rc = cli.main(["dataset", "scan", "--root", str(dataset_root),
                       "--out", str(manifest)])
        assert rc == 0
        doc = json.loads(manifest.read_text())
        assert len(doc["entries"]) == 5
        out = tmp_path / "split.json"
        rc = cli.main(["dataset", "split", "--manifest", str(manifest),
                       "--fractions", "0.6,0.4,0.0", "--seed", "1",
                       "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert {e["split"] for e in doc["entries"]} <= {"train", "val"}

    def test_scan_missing_root(self, tmp_path):
        rc = cli.main(["dataset", "scan", "--root", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "m.json")])
        assert rc == 1


class TestTrainEvalExplain:
    def test_end_to_end(self, tmp_path, tiny_config, sample_png, capsys):
        out = tmp_path / "out"
        rc = cli.main(["train", "--config", str(tiny_config),
                       "--out-dir", str(out)])
        assert rc == 0
        for name in ("ckpt_best.cct", "ckpt_last.cct", "curves.csv",
                     "report.json", "confusion.csv"):
            assert (out / name).exists(), name

        rc = cli.main(["eval", "--config", str(tiny_config),
                       "--ckpt", str(out / "ckpt_last.cct"),
                       "--split", "val", "--out-dir", str(tmp_path / "eval")])
        assert rc == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["class_names"] == ["healthy", "diseased"]

        cam = tmp_path / "cam.png"
        rc = cli.main(["explain", "--image", str(sample_png),
                       "--ckpt", str(out / "ckpt_last.cct"),
                       "--config", str(tiny_config),
                       "--class", "auto", "--out", str(cam)])
        assert rc == 0
        assert cam.exists() and cam.with_suffix(".json").exists()
        assert cam.with_suffix(".overlay.png").exists()

    def test_explain_bad_class_string(self, tmp_path, tiny_config, sample_png):
        rc = cli.main(["explain", "--image", str(sample_png),
                       "--ckpt", str(tmp_path / "none.cct"),
                       "--class", "maybe", "--out", str(tmp_path / "c.png")])
        assert rc == 1

    def test_stats(self, tmp_path, tiny_config):
        rc = cli.main(["stats", "--config", str(tiny_config),
                       "--out-dir", str(tmp_path / "stats")])
        assert rc == 0
        assert (tmp_path / "stats" / "pixel_stats.csv").exists()
        assert (tmp_path / "stats" / "pixel_kde.csv").exists()
