"""Command-line entry point.

Commands: train, forecast, evaluate, ablate, export-scores, synth. Every
run writes a resolved-config snapshot beside its outputs, derives all
randomness from the single seed, and reports failures as machine-readable
JSON on stderr with the exit-code taxonomy 1=usage, 2=data, 3=numeric,
4=internal invariant.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from .config import TrainConfig, config_hash, load_config, resolved_text
from .data import Dataset, SynthSpec, dataset_to_csv, load_csv, synth_generate
from .errors import DataError, MemdiffError, UsageError
from .trainer import Trainer, metrics_json, prepare

VARIANTS = {
    "full": {},
    "w/o-semantic": {"use_semantic": False},
    "w/o-episodic": {"use_episodic": False},
    "w/o-both": {"use_semantic": False, "use_episodic": False},
    "w/o-shared": {"shared_memory": False},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="memdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in [
        ("train", "fit a model and write a checkpoint"),
        ("forecast", "forecast past the end of the dataset from a checkpoint"),
        ("evaluate", "compute test metrics from a checkpoint"),
        ("ablate", "train and evaluate memory-ablation variants"),
        ("export-scores", "dump semantic/episodic attention-score CSVs"),
        ("synth", "generate the synthetic benchmark CSV"),
    ]:
        p = sub.add_parser(name, help=descr)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--substeps", type=int, default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="config override (repeatable)")
        if name == "ablate":
            p.add_argument("--variants", default="full,w/o-semantic,w/o-episodic,w/o-both",
                           help="comma-separated variant names")
    return parser


def _resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    if args.substeps is not None:
        cfg.substeps = args.substeps
    cfg.validate()
    if cfg.threads != 1:
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(limits=cfg.threads)
        except ImportError:
            pass
    return cfg


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _snapshot(cfg: TrainConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write(os.path.join(cfg.out_dir, "resolved_config"), resolved_text(cfg))
    return cfg.out_dir


def _load_dataset(cfg: TrainConfig) -> Dataset:
    if cfg.csv_path:
        ds = load_csv(cfg.csv_path, cfg.dataset, cfg.missing_policy)
        cfg.n_channels = ds.n_channels
        return ds
    if cfg.dataset == "synthetic":
        spec = SynthSpec(length=cfg.synth_length, channels=cfg.synth_channels,
                         noise=cfg.synth_noise, motif_rate=cfg.synth_motif_rate)
        ds, _ = synth_generate(spec, cfg.seed)
        cfg.n_channels = ds.n_channels
        return ds
    raise DataError(f"dataset {cfg.dataset!r} has no csv_path and is not synthetic")


def _prepared_trainer(cfg: TrainConfig, fit: bool, out_dir: str) -> "tuple[Trainer, Dataset]":
    ds = _load_dataset(cfg)
    data = prepare(cfg, ds)
    _write(os.path.join(out_dir, "dataset_stats.json"),
           ds.stats_json((len(data.train), len(data.val), len(data.test))))
    trainer = Trainer(cfg, data)
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    if fit:
        _write(os.path.join(out_dir, "schedule.csv"), trainer.model.sched.to_csv())
        with open(os.path.join(out_dir, "training.log"), "w", encoding="utf-8") as logf:
            trainer.fit(log_stream=logf, checkpoint_path=ckpt)
        trainer.save_checkpoint(ckpt)
    else:
        if not os.path.exists(ckpt):
            raise DataError(f"no checkpoint at {ckpt}; run train first")
        trainer.load_checkpoint(ckpt)
    return trainer, ds


def _write_matrix_csv(path: str, matrix: np.ndarray, header: "list[str]"):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in np.atleast_2d(matrix):
            writer.writerow([repr(float(v)) for v in row])


def cmd_train(cfg: TrainConfig) -> int:
    out = _snapshot(cfg)
    trainer, _ = _prepared_trainer(cfg, fit=True, out_dir=out)
    result = trainer.evaluate("val") if trainer.data.val else trainer.evaluate("test")
    _write(os.path.join(out, "metrics.json"),
           metrics_json(result, {"split": "val" if trainer.data.val else "test",
                                 "config_hash": config_hash(cfg), "seed": cfg.seed}))
    return 0


def cmd_evaluate(cfg: TrainConfig) -> int:
    out = _snapshot(cfg)
    trainer, _ = _prepared_trainer(cfg, fit=False, out_dir=out)
    result = trainer.evaluate("test", substeps=cfg.substeps)
    _write(os.path.join(out, "metrics.json"),
           metrics_json(result, {"split": "test", "config_hash": config_hash(cfg),
                                 "seed": cfg.seed, "substeps": cfg.substeps}))
    return 0


def cmd_forecast(cfg: TrainConfig) -> int:
    out = _snapshot(cfg)
    trainer, ds = _prepared_trainer(cfg, fit=False, out_dir=out)
    stats = trainer.data.stats
    lookback = stats.normalize(ds.values[-cfg.lookback:])
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(5)[4])
    pred = stats.denormalize(trainer.model.forecast(lookback, rng, cfg.substeps))
    _write_matrix_csv(os.path.join(out, "forecasts.csv"), pred,
                      list(ds.channel_names or [f"ch{j}" for j in range(ds.n_channels)]))
    _write(os.path.join(out, "forecasts.json"), json.dumps(
        {"config_hash": config_hash(cfg), "seed": cfg.seed, "substeps": cfg.substeps},
        sort_keys=True))
    return 0


def cmd_ablate(cfg: TrainConfig, variants: str) -> int:
    out = _snapshot(cfg)
    names = [v.strip() for v in variants.split(",") if v.strip()]
    for name in names:
        if name not in VARIANTS:
            raise UsageError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    rows = []
    for name in names:
        vcfg = dataclasses.replace(cfg, out_dir=os.path.join(out, name.replace("/", "_")),
                                   **VARIANTS[name])
        os.makedirs(vcfg.out_dir, exist_ok=True)
        trainer, _ = _prepared_trainer(vcfg.validate(), fit=True, out_dir=vcfg.out_dir)
        result = trainer.evaluate("test")
        rows.append((name, result))
        _write(os.path.join(vcfg.out_dir, "metrics.json"),
               metrics_json(result, {"variant": name, "seed": cfg.seed}))
    with open(os.path.join(out, "ablation.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "mae", "mse", "mae_raw", "mse_raw"])
        for name, r in rows:
            writer.writerow([name, repr(r.mae), repr(r.mse), repr(r.mae_raw), repr(r.mse_raw)])
    return 0


def cmd_export_scores(cfg: TrainConfig) -> int:
    out = _snapshot(cfg)
    trainer, _ = _prepared_trainer(cfg, fit=False, out_dir=out)
    data = trainer.data
    window = data.test[0] if data.test else data.train[0]
    sem, epi = trainer.model.attention_scores(window.lookback)
    if sem is not None:
        _write_matrix_csv(os.path.join(out, "scores_semantic.csv"), sem,
                          [f"block{i}" for i in range(sem.shape[1])])
    if epi is not None and epi.size:
        _write_matrix_csv(os.path.join(out, "scores_episodic.csv"), epi,
                          [f"record{i}" for i in range(epi.shape[1])])
    return 0


def cmd_synth(cfg: TrainConfig) -> int:
    out = _snapshot(cfg)
    spec = SynthSpec(length=cfg.synth_length, channels=cfg.synth_channels,
                     noise=cfg.synth_noise, motif_rate=cfg.synth_motif_rate)
    ds, injections = synth_generate(spec, cfg.seed)
    _write(os.path.join(out, "synthetic.csv"), dataset_to_csv(ds))
    _write(os.path.join(out, "synthetic_injections.json"),
           json.dumps([{"channel": c, "start": s, "motif": m} for c, s, m in injections]))
    _write(os.path.join(out, "dataset_stats.json"), ds.stats_json())
    return 0


def run(argv: "list[str] | None" = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "forecast":
            return cmd_forecast(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.variants)
        if args.command == "export-scores":
            return cmd_export_scores(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        raise UsageError(f"unknown command {args.command!r}")
    except MemdiffError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
