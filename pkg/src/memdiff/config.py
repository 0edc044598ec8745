"""Run configuration: dataclass, file parsing, overrides, resolved snapshots.

Config files are line-oriented ``key = value`` with ``[section]`` headers.
Values are parsed as JSON scalars/lists when possible (so simple TOML
files load unchanged) and fall back to bare strings. Every field of
TrainConfig is addressable; command-line ``--set key=value`` overrides
win over file values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import UsageError


@dataclass
class TrainConfig:
    # [data]
    dataset: str = "synthetic"
    csv_path: str = ""
    split_ratios: "tuple[int, int, int] | None" = None   # None: 3:1:2 for ETT*, else 7:1:2
    missing_policy: str = "strict"                       # strict | ffill
    stride_train: int = 1
    stride_eval: int = 0                                 # 0 means H (non-overlapping forecasts)

    # [model]
    lookback: int = 96
    horizon: int = 24
    n_channels: int = 7
    latent_dim: int = 64
    enc_hidden: "list[int]" = field(default_factory=lambda: [128])
    den_hidden: "list[int]" = field(default_factory=lambda: [256, 256, 256])
    embed_dim: int = 16
    log_var_init: float = -4.0
    precision: str = "double"                            # double | single

    # [diffusion]
    diffusion_steps: int = 10
    schedule_kind: str = "linear-scaled"
    beta_min: float = 0.05
    beta_max: float = 0.55
    substeps: int = 1
    ancestral: bool = False                              # K-step DDPM sampling instead of DDIM

    # [memory]
    use_semantic: bool = True
    use_episodic: bool = True
    shared_memory: bool = True
    # True: the condition head projects [latent ; query] (query bypass).
    # False: memory-mediated conditioning only, the paper-literal routing;
    # ignored (treated as True) when both memories are disabled, since the
    # baseline would otherwise be unconditioned.
    condition_uses_query: bool = True
    semantic_size: int = 64
    episodic_size: int = 70
    queue_size: int = 35
    recall_top_k: int = 5
    margin: float = 1.0

    # [train]
    alpha1: float = 0.1
    alpha2: float = 0.1
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    max_steps: int = 0                                   # 0: run all epochs
    grad_clip: float = 1.0
    checkpoint_every: int = 1                            # epochs
    patience: int = 0                                    # 0: no early stopping

    # [run]
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"

    # synthetic generator knobs ([synth])
    synth_length: int = 4000
    synth_channels: int = 4
    synth_noise: float = 0.1
    synth_motif_rate: float = 0.02

    def validate(self):
        positive = {
            "lookback": self.lookback, "horizon": self.horizon,
            "n_channels": self.n_channels, "latent_dim": self.latent_dim,
            "diffusion_steps": self.diffusion_steps, "semantic_size": self.semantic_size,
            "episodic_size": self.episodic_size, "queue_size": self.queue_size,
            "recall_top_k": self.recall_top_k, "batch_size": self.batch_size,
            "embed_dim": self.embed_dim,
        }
        for name, value in positive.items():
            if value < 1:
                raise UsageError(f"config: {name} must be positive, got {value}")
        if self.queue_size > self.episodic_size:
            raise UsageError("config: queue_size must not exceed episodic_size")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise UsageError("config: alpha1/alpha2 must be nonnegative")
        if self.embed_dim % 2:
            raise UsageError("config: embed_dim must be even")
        if not 1 <= self.substeps <= self.diffusion_steps:
            raise UsageError("config: substeps must lie in 1..diffusion_steps")
        if self.precision not in ("double", "single"):
            raise UsageError(f"config: unknown precision {self.precision!r}")
        if self.missing_policy not in ("strict", "ffill"):
            raise UsageError(f"config: unknown missing_policy {self.missing_policy!r}")
        if self.use_episodic and self.shared_memory and self.n_channels > self.queue_size:
            raise UsageError(
                "config: n_channels patterns per episodic update exceed queue_size"
            )
        return self

    @property
    def eval_stride(self) -> int:
        return self.stride_eval if self.stride_eval > 0 else self.horizon

    def ratios(self) -> "tuple[int, int, int]":
        if self.split_ratios is not None:
            return tuple(self.split_ratios)
        return (3, 1, 2) if self.dataset.upper().startswith("ETT") else (7, 1, 2)


_SECTIONS = {
    "data": ["dataset", "csv_path", "split_ratios", "missing_policy",
             "stride_train", "stride_eval"],
    "model": ["lookback", "horizon", "n_channels", "latent_dim", "enc_hidden",
              "den_hidden", "embed_dim", "log_var_init", "precision"],
    "diffusion": ["diffusion_steps", "schedule_kind", "beta_min", "beta_max",
                  "substeps", "ancestral"],
    "memory": ["use_semantic", "use_episodic", "shared_memory", "condition_uses_query",
               "semantic_size", "episodic_size", "queue_size", "recall_top_k", "margin"],
    "train": ["alpha1", "alpha2", "lr", "batch_size", "epochs", "max_steps",
              "grad_clip", "checkpoint_every", "patience"],
    "run": ["seed", "threads", "out_dir"],
    "synth": ["synth_length", "synth_channels", "synth_noise", "synth_motif_rate"],
}

_FIELD_NAMES = {f.name for f in dataclasses.fields(TrainConfig)}


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config_text(text: str) -> "dict[str, object]":
    """key = value lines with [section] headers to a flat field dict."""
    values: "dict[str, object]" = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            continue  # sections are cosmetic; field names are globally unique
        if "=" not in stripped:
            raise UsageError(f"config line {lineno}: expected key = value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_NAMES:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw)
    return values


def load_config(path: "str | None", overrides: "list[str] | None" = None) -> TrainConfig:
    """Build a TrainConfig from an optional file plus key=value overrides."""
    values: "dict[str, object]" = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                values.update(parse_config_text(f.read()))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip().split(".")[-1]  # accept section.key form
        if key not in _FIELD_NAMES:
            raise UsageError(f"--set: unknown key {key!r}")
        values[key] = _parse_value(raw)
    cfg = TrainConfig()
    for key, val in values.items():
        current = getattr(cfg, key)
        if key == "split_ratios":
            val = None if val in (None, "auto") else tuple(int(v) for v in val)
        elif isinstance(current, bool):
            if isinstance(val, str):
                val = val.lower() in ("1", "true", "yes", "on")
            else:
                val = bool(val)
        elif isinstance(current, int) and not isinstance(val, bool):
            val = int(val)
        elif isinstance(current, float):
            val = float(val)
        elif isinstance(current, list):
            if not isinstance(val, list):
                raise UsageError(f"config: {key} expects a list, got {val!r}")
            val = [int(v) for v in val]
        setattr(cfg, key, val)
    return cfg.validate()


def resolved_text(cfg: TrainConfig) -> str:
    """All fields materialized, in the same parseable format."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            val = getattr(cfg, key)
            if isinstance(val, tuple):
                val = list(val)
            lines.append(f"{key} = {json.dumps(val)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: TrainConfig) -> str:
    """Identity of the run configuration; where it runs (out_dir, threads) is excluded."""
    lines = [line for line in resolved_text(cfg).splitlines()
             if not line.startswith(("out_dir", "threads"))]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]
