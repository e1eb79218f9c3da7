import json
import subprocess
import sys
from pathlib import Path

import pytest

from llnn.experiments import ExperimentConfig, default_config

FAST_OVERRIDES = {
    "train": {"batch_size": 32, "epochs": 2, "shuffle_seed": 0,
              "adam": {"learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999,
                       "epsilon": 1e-7}},
    "sequence": [
        {"positive_char": c, "n_pos_train": 20, "n_neg_train_per_char": 10}
        for c in ("0", "1")
    ],
    "synthetic_train_per_char": 40,
    "sweep_pos": 5,
    "sweep_neg_per_char": 10,
    "backward_second_pos": 20,
    "backward_second_neg_per_char": 10,
}


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "llnn", *args],
                          capture_output=True, text=True)


def write_fast_config(tmp_path, **extra) -> Path:
    p = tmp_path / "config.json"
    p.write_text(json.dumps({**FAST_OVERRIDES, **extra}))
    return p


class TestConfigRoundTrip:
    @pytest.mark.parametrize("experiment", ["e1", "e2", "e3", "e4", "e5", "e6"])
    def test_parse_serialize_parse_is_identity(self, experiment):
        cfg = default_config(experiment)
        once = ExperimentConfig.from_json_dict(cfg.to_json_dict())
        twice = ExperimentConfig.from_json_dict(once.to_json_dict())
        assert once == twice == cfg

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ValueError, match="experiment"):
            ExperimentConfig(experiment="e9")

    def test_unknown_field_rejected(self):
        d = default_config("e1").to_json_dict()
        d["warp_speed"] = True
        with pytest.raises(ValueError, match="warp_speed"):
            ExperimentConfig.from_json_dict(d)

    def test_empty_seeds_rejected(self):
        with pytest.raises(ValueError, match="seeds"):
            ExperimentConfig(experiment="e1", seeds=[])

    def test_emnist_requires_data_dir(self):
        with pytest.raises(ValueError, match="data_dir"):
            ExperimentConfig(experiment="e1", data_source="emnist")


class TestCliRuns:
    def test_e1_writes_expected_files(self, tmp_path):
        cfg = write_fast_config(tmp_path)
        out = tmp_path / "out"
        proc = run_cli("e1-nonforgetting", "--data", "synthetic", "--config", str(cfg),
                       "--seed-list", "0,1", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        assert (out / "e1" / "seed_0.csv").exists()
        assert (out / "e1" / "seed_1.csv").exists()
        agg = json.loads((out / "e1" / "aggregate.json").read_text())
        assert agg["experiment"] == "e1" and agg["n_seeds"] == 2

    def test_idempotent_byte_identical_outputs(self, tmp_path):
        cfg = write_fast_config(tmp_path)
        outs = []
        for run in range(2):
            out = tmp_path / f"out{run}"
            proc = run_cli("e5-graceful", "--data", "synthetic", "--config", str(cfg),
                           "--seed-list", "3", "--out", str(out))
            assert proc.returncode == 0, proc.stderr
            outs.append(out / "e5")
        for name in ("seed_3.csv", "aggregate.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_jobs_flag_does_not_change_results(self, tmp_path):
        cfg = write_fast_config(tmp_path)
        outs = []
        for jobs in ("1", "2"):
            out = tmp_path / f"jobs{jobs}"
            proc = run_cli("e6-backward", "--data", "synthetic", "--config", str(cfg),
                           "--seed-list", "0,1", "--jobs", jobs, "--out", str(out))
            assert proc.returncode == 0, proc.stderr
            outs.append(out / "e6")
        for name in ("seed_0.csv", "seed_1.csv", "aggregate.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_e3_sweep_emits_delta_rows(self, tmp_path):
        cfg = write_fast_config(tmp_path)
        out = tmp_path / "out"
        proc = run_cli("e3-onealways-sweep", "--data", "synthetic", "--config", str(cfg),
                       "--seed-list", "0", "--sweep-chars", "O,Z", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        rows = (out / "e3" / "seed_0.csv").read_text().splitlines()
        for c in ("O", "Z"):
            assert sum(f"sweep:{c}:delta" in r for r in rows) == 1

    def test_e5_phase_labels(self, tmp_path):
        cfg = write_fast_config(tmp_path)
        out = tmp_path / "out"
        proc = run_cli("e5-graceful", "--data", "synthetic", "--config", str(cfg),
                       "--seed-list", "0", "--forget", "0", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        text = (out / "e5" / "seed_0.csv").read_text()
        assert "pre-forget,1," in text and "pre-forget,2," in text
        assert "post-forget,3," in text and "post-forget,4," in text  # epochs continue

    def test_e6_second_flag_restricts_arms(self, tmp_path):
        cfg = write_fast_config(tmp_path)
        out = tmp_path / "out"
        proc = run_cli("e6-backward", "--data", "synthetic", "--config", str(cfg),
                       "--seed-list", "0", "--second", "Z", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        text = (out / "e6" / "seed_0.csv").read_text()
        assert "Z:tune" in text and "O:tune" not in text and "nolinks:tune" in text

    def test_invalid_config_json_fails_with_message(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        proc = run_cli("e1-nonforgetting", "--data", "synthetic",
                       "--config", str(bad), "--out", str(tmp_path / "o"))
        assert proc.returncode != 0
        assert "invalid JSON" in proc.stderr

    def test_unknown_config_field_fails_with_path(self, tmp_path):
        cfg = write_fast_config(tmp_path, mystery_knob=3)
        proc = run_cli("e1-nonforgetting", "--data", "synthetic",
                       "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert proc.returncode != 0
        assert "mystery_knob" in proc.stderr

    def test_emnist_without_dir_fails(self, tmp_path, monkeypatch):
        proc = subprocess.run(
            [sys.executable, "-m", "llnn", "e1-nonforgetting", "--data", "emnist",
             "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "PYTHONPATH": ""},
        )
        assert proc.returncode != 0
        assert "LLNN_DATA_DIR" in proc.stderr


class TestUtilitySubcommands:
    def test_synth_gen_roundtrip(self, tmp_path):
        out = tmp_path / "corpus"
        proc = run_cli("synth-gen", "--out", str(out), "--per-char", "4",
                       "--seed", "7", "--chars", "0,Z")
        assert proc.returncode == 0, proc.stderr
        from llnn.data import parse_idx

        images = parse_idx((out / "synthetic-train-images-idx3-ubyte").read_bytes())
        labels = parse_idx((out / "synthetic-train-labels-idx1-ubyte").read_bytes())
        assert images.shape == (8, 28, 28)
        assert len(labels) == 8
        mapping = (out / "synthetic-mapping.txt").read_text().splitlines()
        assert mapping == ["0 48", "1 90"]

    def test_data_validate_on_generated_fixture(self, tmp_path):
        # build a fake EMNIST directory from serialized synthetic glyphs
        from llnn.data import synthetic_glyphs, serialize_idx

        chars = ["0", "1", "2", "3", "O", "Z", "P", "Q", "R", "S"]
        train, test = synthetic_glyphs(chars, 3, 0)
        d = tmp_path / "emnist"
        d.mkdir()
        for split, name in ((train, "train"), (test, "test")):
            (d / f"emnist-balanced-{name}-images-idx3-ubyte").write_bytes(
                serialize_idx(split.pixels.transpose(0, 2, 1)))
            (d / f"emnist-balanced-{name}-labels-idx1-ubyte").write_bytes(
                serialize_idx(split.labels.astype("uint8")))
        (d / "emnist-balanced-mapping.txt").write_text(
            "".join(f"{i} {ord(c)}\n" for i, c in enumerate(chars)))
        proc = run_cli("data-validate", "--data-dir", str(d))
        assert proc.returncode == 0, proc.stderr
        assert "train: 30 images" in proc.stdout

    def test_data_validate_missing_dir(self, tmp_path):
        proc = run_cli("data-validate", "--data-dir", str(tmp_path / "nope"))
        assert proc.returncode == 2
