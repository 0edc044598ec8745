"""Training orchestration, evaluation, and hyperparameter grid search.

One training step: freeze the step's randomness, run the loss forward and
exact backward, clip the global gradient norm, apply Adam, then hand the
hardest sample's channel queries to the episodic store. All random
streams are spawned from the single run seed, so identical config + seed
reproduces identical parameters bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .config import TrainConfig, config_hash
from .data import ChannelStats, Dataset, SeriesWindow, split, windows
from .episodic import select_special
from .errors import DataError, NumericError
from .model import ForecastModel, draw_step_randomness
from .nn import Adam

log = logging.getLogger("memdiff.trainer")


def mae(truth: np.ndarray, pred: np.ndarray) -> float:
    """Mean absolute error over all observed entries."""
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.shape != pred.shape:
        raise DataError(f"metric shapes differ: {truth.shape} vs {pred.shape}")
    return float(np.mean(np.abs(truth - pred)))


def mse(truth: np.ndarray, pred: np.ndarray) -> float:
    """Mean squared error over all observed entries."""
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.shape != pred.shape:
        raise DataError(f"metric shapes differ: {truth.shape} vs {pred.shape}")
    diff = np.abs(truth - pred)
    return float(np.mean(diff * diff))


@dataclass
class PreparedData:
    """Chronological splits, normalized with train-segment statistics only."""

    stats: ChannelStats
    train: "list[SeriesWindow]"
    val: "list[SeriesWindow]"
    test: "list[SeriesWindow]"


def prepare(cfg: TrainConfig, ds: Dataset) -> PreparedData:
    if ds.n_channels != cfg.n_channels:
        raise DataError(f"dataset has {ds.n_channels} channels, config says {cfg.n_channels}")
    span = cfg.lookback + cfg.horizon
    segments = split(ds, cfg.ratios(), min_len=span)
    stats = ChannelStats.fit(segments[0])
    normed = [stats.normalize(seg) for seg in segments]
    return PreparedData(
        stats=stats,
        train=windows(normed[0], cfg.lookback, cfg.horizon, cfg.stride_train),
        val=windows(normed[1], cfg.lookback, cfg.horizon, cfg.eval_stride),
        test=windows(normed[2], cfg.lookback, cfg.horizon, cfg.eval_stride),
    )


@dataclass
class StepResult:
    step: int
    total: float
    condition: float
    l1: float
    l2: float
    grad_norm: float = 0.0
    aborted: bool = False
    reason: str = ""


@dataclass
class EvalResult:
    mae: float
    mse: float
    mae_raw: float
    mse_raw: float
    n_windows: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "mae_raw": self.mae_raw,
                "mse_raw": self.mse_raw, "n_windows": self.n_windows}


class Trainer:
    def __init__(self, cfg: TrainConfig, data: "PreparedData | None" = None):
        cfg.validate()
        self.cfg = cfg
        self.data = data
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        self.model = ForecastModel(cfg, np.random.default_rng(seeds[0]))
        self._train_rng = np.random.default_rng(seeds[1])
        self._shuffle_rng = np.random.default_rng(seeds[2])
        self._eval_seed = seeds[3]
        self.opt = Adam(lr=cfg.lr)
        self.step_count = 0
        self.incidents: "list[str]" = []
        self.history: "list[StepResult]" = []

    # -- single step -------------------------------------------------------

    def training_step(self, batch_x: np.ndarray, batch_y: np.ndarray) -> StepResult:
        """One optimizer step over a normalized batch, then the episodic update."""
        cfg = self.cfg
        self.model.params.zero_grads()
        draws = draw_step_randomness(self._train_rng, cfg, batch_x.shape[0])
        result = StepResult(self.step_count + 1, np.nan, np.nan, np.nan, np.nan)
        try:
            out = self.model.loss(batch_x, batch_y, draws, compute_grad=True)
        except NumericError as exc:
            return self._abort(result, f"loss evaluation failed: {exc}")
        result.total, result.condition = out.total, out.condition
        result.l1, result.l2 = out.l1, out.l2
        if not np.isfinite(out.total):
            return self._abort(result, f"non-finite total loss {out.total}")
        result.grad_norm = self.model.params.clip_global_norm(cfg.grad_clip)
        try:
            self.opt.step(self.model.params)
        except NumericError as exc:
            return self._abort(result, str(exc))
        if self.model.semantic is not None:
            self.model.semantic.rejitter(self._train_rng)
        if self.model.episodic is not None:
            # Hardness is the denoising term only; the compactness losses
            # say nothing about which sample the predictor found hard.
            pattern = select_special(out.per_sample_condition, out.queries)
            if pattern is not None:
                self.model.episodic.update(pattern)
        self.step_count += 1
        result.step = self.step_count
        return result

    def _abort(self, result: StepResult, reason: str) -> StepResult:
        result.aborted = True
        result.reason = reason
        self.incidents.append(f"step={self.step_count + 1} aborted: {reason}")
        log.warning("step %d aborted: %s", self.step_count + 1, reason)
        return result

    # -- loop ----------------------------------------------------------------

    def _batches(self, wins: "list[SeriesWindow]"):
        order = self._shuffle_rng.permutation(len(wins))
        bs = self.cfg.batch_size
        for lo in range(0, len(order), bs):
            idx = order[lo:lo + bs]
            yield (np.stack([wins[i].lookback for i in idx]),
                   np.stack([wins[i].horizon for i in idx]))

    def fit(self, log_stream=None, checkpoint_path: "str | None" = None) -> "list[StepResult]":
        """Run the configured epochs (or max_steps) over the training windows.

        With checkpoint_path set, the latest state is written there every
        checkpoint_every epochs (and the caller typically saves once more
        at the end).
        """
        if self.data is None or not self.data.train:
            raise DataError("trainer has no training windows")
        cfg = self.cfg
        best_val = np.inf
        stale = 0
        done = False
        for epoch in range(cfg.epochs):
            for batch_x, batch_y in self._batches(self.data.train):
                res = self.training_step(batch_x, batch_y)
                self.history.append(res)
                if log_stream is not None:
                    log_stream.write(self._log_line(epoch, res))
                if cfg.max_steps and self.step_count >= cfg.max_steps:
                    done = True
                    break
            if checkpoint_path and (epoch + 1) % cfg.checkpoint_every == 0:
                self.save_checkpoint(checkpoint_path)
            if done:
                break
            if cfg.patience > 0 and self.data.val:
                val = self.evaluate("val").mae
                if val < best_val - 1e-12:
                    best_val, stale = val, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        log.info("early stop after epoch %d (patience %d)", epoch, cfg.patience)
                        break
        return self.history

    def _log_line(self, epoch: int, res: StepResult) -> str:
        if res.aborted:
            return f"step={res.step} epoch={epoch} aborted reason={res.reason!r}\n"
        return (f"step={res.step} epoch={epoch} cond={res.condition:.6f} "
                f"l1={res.l1:.6f} l2={res.l2:.6f} total={res.total:.6f} "
                f"lr={self.cfg.lr:.6g} grad_norm={res.grad_norm:.6f}\n")

    # -- evaluation ------------------------------------------------------------

    def evaluate(self, which: str = "test", substeps: "int | None" = None) -> EvalResult:
        """Forecast every window of a split with the deterministic sampler.

        Metrics are reported on the normalized scale (the benchmark
        convention) and on the de-normalized raw scale.
        """
        wins = {"train": self.data.train, "val": self.data.val,
                "test": self.data.test}[which]
        if not wins:
            raise DataError(f"empty {which} split")
        rng = np.random.default_rng(self._eval_seed)
        stats = self.data.stats
        abs_sum = sq_sum = abs_raw = sq_raw = 0.0
        count = 0
        for win in wins:
            pred = self.model.forecast(win.lookback, rng, substeps)
            diff = np.abs(win.horizon - pred)
            abs_sum += diff.sum()
            sq_sum += (diff * diff).sum()
            raw_diff = np.abs(stats.denormalize(win.horizon) - stats.denormalize(pred))
            abs_raw += raw_diff.sum()
            sq_raw += (raw_diff * raw_diff).sum()
            count += diff.size
        return EvalResult(mae=abs_sum / count, mse=sq_sum / count,
                          mae_raw=abs_raw / count, mse_raw=sq_raw / count,
                          n_windows=len(wins))

    # -- persistence -------------------------------------------------------------

    def save_checkpoint(self, path: str):
        arrays = self.model.state_arrays()
        arrays.update(self.opt.state_arrays())
        arrays["trainer/step"] = np.array([self.step_count], dtype=np.int64)
        meta = {"config_hash": config_hash(self.cfg), "seed": self.cfg.seed,
                "step": self.step_count}
        checkpoint.save(path, arrays, meta)

    def load_checkpoint(self, path: str):
        arrays, meta = checkpoint.load(path)
        self.model.load_state_arrays(arrays)
        if "adam/t" in arrays:
            self.opt.load_state_arrays(arrays)
        self.step_count = int(arrays["trainer/step"][0])
        return meta


def grid_search(alpha1_grid, alpha2_grid, state_factory) -> "tuple[float, float]":
    """Exhaustive (alpha1, alpha2) search by validation MAE.

    state_factory(alpha1, alpha2) must return a fitted Trainer (or any
    object with evaluate('val')). Ties break toward smaller alphas.
    """
    pairs = [(float(a1), float(a2)) for a1 in alpha1_grid for a2 in alpha2_grid]
    if not pairs:
        raise DataError("empty grid")
    best = None
    for a1, a2 in sorted(pairs):
        trainer = state_factory(a1, a2)
        val = trainer.evaluate("val").mae
        key = (val, a1, a2)
        if best is None or key < best:
            best = key
    return best[1], best[2]


def metrics_json(result: EvalResult, extra: "dict | None" = None) -> str:
    payload = result.as_dict()
    payload.update(extra or {})
    return json.dumps(payload, sort_keys=True)
