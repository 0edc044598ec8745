"""Drive the command-line interface end to end in a scratch directory.

synth -> train -> evaluate -> forecast -> export-scores, then show the
files each stage produced.
"""

import os
import tempfile

from memdiff.cli import run

CONFIG = """
[model]
lookback = 24
horizon = 8
n_channels = 4
latent_dim = 8
enc_hidden = [16]
den_hidden = [32]
embed_dim = 8

[memory]
semantic_size = 6
episodic_size = 8
queue_size = 4
recall_top_k = 2

[train]
batch_size = 16
epochs = 2

[data]
dataset = "synthetic"

[synth]
synth_length = 900
synth_channels = 4
"""

with tempfile.TemporaryDirectory() as tmp:
    cfg_path = os.path.join(tmp, "c.toml")
    with open(cfg_path, "w") as f:
        f.write(CONFIG)
    out = os.path.join(tmp, "run")

    for argv in (
        ["synth", "--config", cfg_path, "--out", out, "--seed", "7"],
        ["train", "--config", cfg_path, "--out", out, "--seed", "7"],
        ["evaluate", "--config", cfg_path, "--out", out, "--seed", "7"],
        ["forecast", "--config", cfg_path, "--out", out, "--seed", "7", "--substeps", "2"],
        ["export-scores", "--config", cfg_path, "--out", out, "--seed", "7"],
    ):
        code = run(argv)
        print(f"memdiff {' '.join(argv[:1])} -> exit {code}")
        assert code == 0

    print("\nartifacts:")
    for name in sorted(os.listdir(out)):
        path = os.path.join(out, name)
        print(f"  {name:28s} {os.path.getsize(path):7d} bytes")

    with open(os.path.join(out, "metrics.json")) as f:
        print("\nmetrics.json:", f.read())
    with open(os.path.join(out, "forecasts.csv")) as f:
        print("forecasts.csv (first 3 lines):")
        for line in f.read().splitlines()[:3]:
            print(" ", line)
