"""End-to-end tests of the command-line interface.

Commands run in-process through cli.main so exit codes and outputs can
be asserted directly; the heavier flows (train, ablate) use a 32x32
dataset and a narrow model to stay fast.
"""

import json
import zlib

import numpy as np
import pytest

from fbnet import cli
from fbnet.data import generate, load_split
from fbnet.netpbm import read_ppm, write_ppm

TINY_MODEL = {"stage_channels": [4, 6, 6, 8]}
TINY_TRAIN = {
    "epochs": 1,
    "batch_size": 2,
    "crop": 32,
    "scale_range": [1.0, 1.0],
    "flip_prob": 0.0,
    "lr0": 0.02,
}


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    gen_cfg = write_config(root / "gen.json", {"size": 32})
    out = root / "camo"
    assert cli.main(["gen-data", "--out", str(out), "--split", "train", "--count", "4",
                     "--seed", "0", "--config", gen_cfg]) == 0
    assert cli.main(["gen-data", "--out", str(out), "--split", "val", "--count", "2",
                     "--seed", "1", "--config", gen_cfg]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.json", {"train": TINY_TRAIN, "model": TINY_MODEL})
    out = root / "run"
    assert cli.main(["train", "--data", str(dataset), "--split", "train",
                     "--out", str(out), "--config", cfg]) == 0
    return out


class TestUsageErrors:
    def test_no_command(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["gen-data"])
        assert exc.value.code == 1

    def test_bad_flag_value(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["dilution", "--stride", "three"])
        assert exc.value.code == 1


class TestGenData:
    def test_writes_samples_and_manifest(self, dataset):
        assert (dataset / "train" / "00000.ppm").exists()
        assert (dataset / "train" / "00003.pgm").exists()
        assert (dataset / "val" / "00001.ppm").exists()
        manifest = json.loads((dataset / "dataset.json").read_text())
        assert manifest["size"] == 32
        assert manifest["splits"]["train"] == {"count": 4, "seed": 0}
        assert manifest["splits"]["val"] == {"count": 2, "seed": 1}

    def test_refuses_existing_split_without_force(self, dataset, capsys):
        gen_cfg = write_config(dataset / "gen2.json", {"size": 32})
        code = cli.main(["gen-data", "--out", str(dataset), "--split", "train",
                         "--count", "2", "--seed", "0", "--config", gen_cfg])
        assert code == 2
        assert "not empty" in capsys.readouterr().err

    def test_force_overwrites(self, tmp_path):
        gen_cfg = write_config(tmp_path / "gen.json", {"size": 32})
        out = tmp_path / "d"
        argv = ["gen-data", "--out", str(out), "--split", "train", "--count", "1",
                "--seed", "5", "--config", gen_cfg]
        assert cli.main(argv) == 0
        assert cli.main(argv + ["--force"]) == 0

    def test_default_seed_derives_from_split_name(self, tmp_path):
        gen_cfg = write_config(tmp_path / "gen.json", {"size": 32})
        out = tmp_path / "d"
        assert cli.main(["gen-data", "--out", str(out), "--split", "val",
                         "--count", "1", "--config", gen_cfg]) == 0
        manifest = json.loads((out / "dataset.json").read_text())
        assert manifest["splits"]["val"]["seed"] == zlib.crc32(b"val") % 100000

    def test_negative_count_is_usage_error(self, tmp_path):
        assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--count", "-1"]) == 1

    def test_broken_config_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(bad)]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_unknown_generator_field(self, tmp_path):
        cfg = write_config(tmp_path / "gen.json", {"bogus": 1})
        assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--config", cfg]) == 1

    def test_config_must_be_object(self, tmp_path):
        cfg = write_config(tmp_path / "gen.json", [1, 2])
        assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--config", cfg]) == 2


class TestTrain:
    def test_run_artifacts(self, run_dir):
        assert (run_dir / "checkpoint_final.fbn1").exists()
        assert (run_dir / "train_log.csv").exists()
        echo = json.loads((run_dir / "config.json").read_text())
        assert echo["model"]["inject"] == ["res5"]

    def test_flat_config_means_train_only(self, dataset, tmp_path):
        # a config file without the train/model split is all train fields
        cfg = write_config(tmp_path / "cfg.json", TINY_TRAIN)
        out = tmp_path / "run"
        assert cli.main(["train", "--data", str(dataset), "--out", str(out),
                         "--config", cfg, "--no-fbnet"]) == 0
        echo = json.loads((out / "config.json").read_text())
        assert echo["train"]["epochs"] == 1
        assert echo["model"]["inject"] == []

    def test_no_fbnet_conflicts_with_inject(self, dataset, tmp_path):
        assert cli.main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"),
                         "--no-fbnet", "--inject", "res5"]) == 1

    def test_unknown_injection_stage(self, dataset, tmp_path):
        assert cli.main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"),
                         "--inject", "res9"]) == 1

    def test_missing_dataset(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", {"train": TINY_TRAIN, "model": TINY_MODEL})
        assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out",
                         str(tmp_path / "r"), "--config", cfg]) == 2

    def test_unknown_top_level_config_key(self, dataset, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", {"train": TINY_TRAIN, "oops": {}})
        assert cli.main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"),
                         "--config", cfg]) == 1

    def test_seed_override_lands_in_echo(self, dataset, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", {"train": TINY_TRAIN, "model": TINY_MODEL})
        out = tmp_path / "run"
        assert cli.main(["train", "--data", str(dataset), "--out", str(out),
                         "--config", cfg, "--seed", "9"]) == 0
        echo = json.loads((out / "config.json").read_text())
        assert echo["train"]["seed"] == 9


class TestEval:
    def test_eval_writes_report(self, dataset, run_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = cli.main(["eval", "--data", str(dataset), "--split", "val",
                         "--checkpoint", str(run_dir / "checkpoint_final.fbn1"),
                         "--out", str(out)])
        assert code == 0
        captured = capsys.readouterr().out
        assert "miou" in captured
        report = json.loads((out / "eval.json").read_text())
        assert set(report) == {"confusion", "per_class_iou", "miou", "f_miou"}
        assert np.asarray(report["confusion"]).sum() == 2 * 32 * 32

    def test_eval_without_config_json(self, run_dir, dataset, tmp_path):
        orphan = tmp_path / "orphan.fbn1"
        orphan.write_bytes((run_dir / "checkpoint_final.fbn1").read_bytes())
        assert cli.main(["eval", "--data", str(dataset), "--split", "val",
                         "--checkpoint", str(orphan)]) == 2

    def test_eval_missing_checkpoint_file(self, run_dir, dataset):
        assert cli.main(["eval", "--data", str(dataset), "--split", "val",
                         "--checkpoint", str(run_dir / "missing.fbn1")]) == 2


class TestGradcheckCommand:
    def test_ops_only_passes(self, capsys):
        assert cli.main(["gradcheck", "--ops-only", "--seeds", "1"]) == 0
        out = capsys.readouterr().out
        assert "max rel err" in out
        assert "FAIL" not in out

    def test_bad_seed_count(self):
        assert cli.main(["gradcheck", "--seeds", "0"]) == 1


class TestDilutionCommand:
    def test_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "probe.csv"
        assert cli.main(["dilution", "--stride", "3", "--out", str(out)]) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "stride,k,ce_ratio,bwbce_ratio"
        assert len(lines) == 10
        assert lines[1].startswith("3,1,")

    def test_prints_without_out(self, capsys):
        assert cli.main(["dilution", "--stride", "2"]) == 0
        assert capsys.readouterr().out.startswith("stride,k,")

    def test_stride_too_small(self):
        assert cli.main(["dilution", "--stride", "1"]) == 1


class TestVisualize:
    def test_heatmap_roundtrip(self, run_dir, tmp_path):
        sample = generate_sample()
        ppm = tmp_path / "input.ppm"
        write_ppm(ppm, sample.image)
        out = tmp_path / "heat.ppm"
        assert cli.main(["visualize", "--checkpoint", str(run_dir / "checkpoint_final.fbn1"),
                         "--image", str(ppm), "--stage", "res5", "--out", str(out)]) == 0
        heat = read_ppm(out)
        assert heat.shape == (3, 4, 4)

    def test_stage_without_block(self, run_dir, tmp_path):
        sample = generate_sample()
        ppm = tmp_path / "input.ppm"
        write_ppm(ppm, sample.image)
        assert cli.main(["visualize", "--checkpoint", str(run_dir / "checkpoint_final.fbn1"),
                         "--image", str(ppm), "--stage", "res4",
                         "--out", str(tmp_path / "h.ppm")]) == 1


def generate_sample():
    from fbnet.data import CamoConfig

    return generate(CamoConfig(size=32), 0)


class TestAblate:
    def test_four_arm_matrix(self, dataset, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json", {"train": TINY_TRAIN, "model": TINY_MODEL})
        report = tmp_path / "ablation.csv"
        runs = tmp_path / "runs"
        code = cli.main(["ablate", "--data", str(dataset), "--seeds", "1",
                         "--out", str(report), "--config", cfg, "--runs-dir", str(runs)])
        assert code == 0
        lines = report.read_text().strip().split("\n")
        assert lines[0] == "arm,seed,miou,f_miou"
        # 4 arms x 1 seed + 4 mean rows
        assert len(lines) == 9
        arms = [line.split(",")[0] for line in lines[1:5]]
        assert arms == ["baseline", "bwbce_only", "dfm_only", "fbnet"]
        assert all(line.split(",")[1] == "mean" for line in lines[5:])
        for arm in arms:
            assert (runs / f"{arm}_seed0" / "checkpoint_final.fbn1").exists()
        # baseline run must truly have no injected block
        echo = json.loads((runs / "baseline_seed0" / "config.json").read_text())
        assert echo["model"]["inject"] == []

    def test_seed_validation(self, dataset, tmp_path):
        assert cli.main(["ablate", "--data", str(dataset), "--seeds", "0",
                         "--out", str(tmp_path / "r.csv")]) == 1


class TestLoadSplitRoundTrip:
    def test_cli_dataset_matches_generator(self, dataset):
        from dataclasses import replace

        from fbnet.data import CamoConfig

        samples = load_split(dataset, "val")
        regen = generate(replace(CamoConfig(size=32), seed=1), 0)
        assert np.array_equal(samples[0].mask, regen.mask)
        assert np.allclose(samples[0].image, regen.image, atol=1.0 / 255.0 + 1e-7)
