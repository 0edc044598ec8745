import json
import os

import numpy as np
import pytest

from memdiff.cli import run
from memdiff.config import TrainConfig, config_hash, load_config, parse_config_text, resolved_text
from memdiff.errors import UsageError

TINY = """
[model]
lookback = 8
horizon = 4
n_channels = 2
latent_dim = 4
enc_hidden = [8]
den_hidden = [16]
embed_dim = 8

[diffusion]
diffusion_steps = 4

[memory]
semantic_size = 3
episodic_size = 4
queue_size = 2
recall_top_k = 2

[train]
batch_size = 4
epochs = 1

[data]
dataset = "synthetic"

[synth]
synth_length = 400
synth_channels = 2
"""


@pytest.fixture
def tiny_cfg_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(TINY)
    return str(path)


class TestConfig:
    def test_parse_sections_and_values(self):
        vals = parse_config_text(TINY)
        assert vals["lookback"] == 8
        assert vals["dataset"] == "synthetic"
        assert vals["enc_hidden"] == [8]

    def test_bare_strings_accepted(self):
        assert parse_config_text("schedule_kind = linear-scaled")["schedule_kind"] == "linear-scaled"

    def test_unknown_key_rejected(self):
        with pytest.raises(UsageError, match="unknown key"):
            parse_config_text("nonsense = 3")

    def test_garbled_line_rejected(self):
        with pytest.raises(UsageError, match="line 2"):
            parse_config_text("lookback = 8\njust words\n")

    def test_overrides_win(self, tiny_cfg_file):
        cfg = load_config(tiny_cfg_file, ["lookback=16", "train.lr=0.01"])
        assert cfg.lookback == 16
        assert cfg.lr == 0.01

    def test_resolved_text_roundtrip(self, tiny_cfg_file):
        cfg = load_config(tiny_cfg_file, ["seed=9"])
        text = resolved_text(cfg)
        reparsed = parse_config_text(text)
        cfg2 = TrainConfig(**{k: tuple(v) if k == "split_ratios" and v is not None else v
                              for k, v in reparsed.items()})
        assert config_hash(cfg) == config_hash(cfg2)

    def test_ratios_default_by_dataset(self):
        assert TrainConfig(dataset="ETTh1").ratios() == (3, 1, 2)
        assert TrainConfig(dataset="weather").ratios() == (7, 1, 2)
        assert TrainConfig(dataset="ETTh1", split_ratios=(7, 1, 2)).ratios() == (7, 1, 2)

    def test_validation_errors(self):
        with pytest.raises(UsageError):
            TrainConfig(queue_size=99).validate()
        with pytest.raises(UsageError):
            TrainConfig(embed_dim=7).validate()
        with pytest.raises(UsageError):
            TrainConfig(alpha1=-0.1).validate()


class TestCliCommands:
    def test_synth_writes_dataset(self, tmp_path, tiny_cfg_file):
        out = str(tmp_path / "out")
        assert run(["synth", "--config", tiny_cfg_file, "--out", out, "--seed", "3"]) == 0
        assert os.path.exists(os.path.join(out, "synthetic.csv"))
        assert os.path.exists(os.path.join(out, "resolved_config"))
        stats = json.loads(open(os.path.join(out, "dataset_stats.json")).read())
        assert stats["channels"] == 2

    def test_train_twice_byte_identical_checkpoints(self, tmp_path, tiny_cfg_file):
        blobs = []
        for sub in ("a", "b"):
            out = str(tmp_path / sub)
            code = run(["train", "--config", tiny_cfg_file, "--seed", "7", "--out", out])
            assert code == 0
            with open(os.path.join(out, "checkpoint.bin"), "rb") as f:
                blobs.append(f.read())
        assert blobs[0] == blobs[1]

    def test_train_then_evaluate_and_forecast(self, tmp_path, tiny_cfg_file):
        out = str(tmp_path / "run")
        assert run(["train", "--config", tiny_cfg_file, "--out", out, "--seed", "1"]) == 0
        assert os.path.exists(os.path.join(out, "training.log"))
        assert run(["evaluate", "--config", tiny_cfg_file, "--out", out, "--seed", "1"]) == 0
        metrics = json.loads(open(os.path.join(out, "metrics.json")).read())
        assert {"mae", "mse", "mae_raw", "mse_raw"} <= set(metrics)
        assert run(["forecast", "--config", tiny_cfg_file, "--out", out, "--seed", "1",
                    "--substeps", "2"]) == 0
        lines = open(os.path.join(out, "forecasts.csv")).read().strip().splitlines()
        assert len(lines) == 1 + 4  # header + horizon rows
        sidecar = json.loads(open(os.path.join(out, "forecasts.json")).read())
        assert sidecar["substeps"] == 2 and sidecar["seed"] == 1

    def test_export_scores_match_forward_pass(self, tmp_path, tiny_cfg_file):
        out = str(tmp_path / "run")
        assert run(["train", "--config", tiny_cfg_file, "--out", out, "--seed", "2"]) == 0
        assert run(["export-scores", "--config", tiny_cfg_file, "--out", out,
                    "--seed", "2"]) == 0
        sem_lines = open(os.path.join(out, "scores_semantic.csv")).read().strip().splitlines()
        got = np.array([[float(v) for v in line.split(",")] for line in sem_lines[1:]])

        # recompute the same forward pass from the checkpoint
        from memdiff import Trainer, load_config as lc, prepare, synth_generate, SynthSpec
        cfg = lc(tiny_cfg_file, [f"out_dir={out}", "seed=2"])
        ds, _ = synth_generate(SynthSpec(length=cfg.synth_length, channels=cfg.synth_channels,
                                         noise=cfg.synth_noise, motif_rate=cfg.synth_motif_rate),
                               cfg.seed)
        trainer = Trainer(cfg, prepare(cfg, ds))
        trainer.load_checkpoint(os.path.join(out, "checkpoint.bin"))
        sem, _ = trainer.model.attention_scores(trainer.data.test[0].lookback)
        np.testing.assert_array_equal(got, sem)

    def test_ablate_rows(self, tmp_path, tiny_cfg_file):
        out = str(tmp_path / "ablate")
        code = run(["ablate", "--config", tiny_cfg_file, "--out", out, "--seed", "4",
                    "--set", "epochs=1", "--set", "synth_length=300"])
        assert code == 0
        lines = open(os.path.join(out, "ablation.csv")).read().strip().splitlines()
        assert lines[0] == "variant,mae,mse,mae_raw,mse_raw"
        names = [line.split(",")[0] for line in lines[1:]]
        assert names == ["full", "w/o-semantic", "w/o-episodic", "w/o-both"]

    def test_unknown_variant(self, tmp_path, tiny_cfg_file, capsys):
        code = run(["ablate", "--config", tiny_cfg_file, "--out", str(tmp_path / "x"),
                    "--variants", "nope"])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "UsageError"

    def test_usage_error_is_machine_readable(self, capsys):
        code = run(["train", "--config", "/does/not/exist"])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["exit_code"] == 1

    def test_unknown_flag(self, capsys):
        assert run(["train", "--frobnicate"]) == 1

    def test_missing_checkpoint_is_data_error(self, tmp_path, tiny_cfg_file, capsys):
        code = run(["evaluate", "--config", tiny_cfg_file, "--out", str(tmp_path / "none")])
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "DataError"

    def test_input_files_not_mutated(self, tmp_path):
        from memdiff.data import dataset_to_csv, synth_generate as gen
        from memdiff import SynthSpec
        ds, _ = gen(SynthSpec(length=420, channels=2), seed=0)
        csv_path = tmp_path / "input.csv"
        csv_path.write_text(dataset_to_csv(ds))
        before = csv_path.read_bytes()
        out = str(tmp_path / "out")
        code = run(["train", "--set", f"csv_path={csv_path}", "--set", "dataset=mine",
                    "--set", "lookback=8", "--set", "horizon=4", "--set", "n_channels=2",
                    "--set", "latent_dim=4", "--set", "enc_hidden=[8]",
                    "--set", "den_hidden=[16]", "--set", "embed_dim=8",
                    "--set", "diffusion_steps=4", "--set", "semantic_size=3",
                    "--set", "episodic_size=4", "--set", "queue_size=2",
                    "--set", "recall_top_k=2", "--set", "epochs=1",
                    "--set", "batch_size=4", "--out", out])
        assert code == 0
        assert csv_path.read_bytes() == before
