"""Full forecaster: parameters, memories, loss pipeline, sampling.

The training loss is evaluated as a pure function of the parameters once
the per-step random draws (step indices, forward noise, mixup masks,
reparameterization noise) are frozen, which is what makes the exact
backward pass checkable against finite differences.

Channel-row layout: batched per-channel vectors are stacked as
(batch * n_channels, ...) with channel index = row % n_channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conditioning, denoiser
from .config import TrainConfig
from .episodic import EpisodicStore
from .errors import DataError
from .nn import Mlp, ParamStore
from .schedule import make_schedule
from .semantic import SemanticMemory


class SemanticBank:
    """One channel-shared semantic memory, or per-channel copies."""

    def __init__(self, store: ParamStore, cfg: TrainConfig, rng: np.random.Generator):
        self.n_channels = cfg.n_channels
        self.shared = cfg.shared_memory
        shape = (cfg.semantic_size, cfg.latent_dim)
        if self.shared:
            blocks = store.register("semantic/blocks", rng.standard_normal(shape))
            self.mems = [SemanticMemory(blocks)]
        else:
            self.mems = [
                SemanticMemory(store.register(f"semantic/blocks/ch{j}", rng.standard_normal(shape)))
                for j in range(self.n_channels)
            ]

    def _split(self, rows: np.ndarray):
        """Per-channel row groups when memories are not shared."""
        return [rows[j::self.n_channels] for j in range(self.n_channels)]

    def recall(self, rows: np.ndarray):
        if self.shared:
            out, trace = self.mems[0].recall(rows)
            return out, [trace]
        out = np.zeros_like(rows)
        traces = []
        for j, sub in enumerate(self._split(rows)):
            out[j::self.n_channels], trace = self.mems[j].recall(sub)
            traces.append(trace)
        return out, traces

    def recall_backward(self, traces, upstream: np.ndarray) -> np.ndarray:
        if self.shared:
            return self.mems[0].recall_backward(traces[0], upstream)
        d_rows = np.zeros_like(upstream)
        for j in range(self.n_channels):
            d_rows[j::self.n_channels] = self.mems[j].recall_backward(
                traces[j], upstream[j::self.n_channels]
            )
        return d_rows

    def losses(self, rows: np.ndarray, margin: float):
        if self.shared:
            l1, l2, trace = self.mems[0].losses(rows, margin)
            return l1, l2, [trace]
        l1 = l2 = 0.0
        traces = []
        for j, sub in enumerate(self._split(rows)):
            a, b, trace = self.mems[j].losses(sub, margin)
            l1 += a
            l2 += b
            traces.append(trace)
        return l1, l2, traces

    def losses_backward(self, traces, c1: float, c2: float) -> np.ndarray:
        if self.shared:
            return self.mems[0].losses_backward(traces[0], c1, c2)
        rows = sum(t.queries.shape[0] for t in traces)
        d_rows = np.zeros((rows, self.mems[0].dim))
        for j in range(self.n_channels):
            d_rows[j::self.n_channels] = self.mems[j].losses_backward(traces[j], c1, c2)
        return d_rows

    def scores(self, queries: np.ndarray) -> np.ndarray:
        """(N, N1) attention-score matrix for one window's channel queries."""
        if self.shared:
            return self.mems[0].scores(queries)
        return np.stack([self.mems[j].scores(queries[j:j + 1])[0]
                         for j in range(self.n_channels)])

    def rejitter(self, rng: np.random.Generator):
        for mem in self.mems:
            mem.rejitter(rng)


class EpisodicBank:
    """One channel-shared episodic store, or per-channel copies."""

    def __init__(self, cfg: TrainConfig):
        self.n_channels = cfg.n_channels
        self.shared = cfg.shared_memory
        n = 1 if self.shared else cfg.n_channels
        self.stores = [
            EpisodicStore(cfg.latent_dim, cfg.episodic_size, cfg.queue_size, cfg.recall_top_k)
            for _ in range(n)
        ]

    def recall(self, rows: np.ndarray, update_freq: bool):
        if self.shared:
            out, trace = self.stores[0].recall(rows, update_freq)
            return out, [trace]
        out = np.zeros_like(rows)
        traces = []
        for j in range(self.n_channels):
            out[j::self.n_channels], trace = self.stores[j].recall(
                rows[j::self.n_channels], update_freq
            )
            traces.append(trace)
        return out, traces

    def recall_backward(self, traces, upstream: np.ndarray) -> np.ndarray:
        if self.shared:
            return self.stores[0].recall_backward(traces[0], upstream)
        d_rows = np.zeros_like(upstream)
        for j in range(self.n_channels):
            d_rows[j::self.n_channels] = self.stores[j].recall_backward(
                traces[j], upstream[j::self.n_channels]
            )
        return d_rows

    def update(self, patterns: np.ndarray):
        """patterns: (N, d), one special pattern per channel."""
        if self.shared:
            self.stores[0].update(patterns)
        else:
            for j in range(self.n_channels):
                self.stores[j].update(patterns[j:j + 1])

    def scores(self, queries: np.ndarray) -> np.ndarray:
        if self.shared:
            return self.stores[0].scores(queries)
        rows = [self.stores[j].scores(queries[j:j + 1])[0] for j in range(self.n_channels)]
        width = max((r.size for r in rows), default=0)
        out = np.zeros((self.n_channels, width))
        for j, r in enumerate(rows):
            out[j, :r.size] = r
        return out

    def state_arrays(self) -> "dict[str, np.ndarray]":
        out = {}
        for i, store in enumerate(self.stores):
            out.update(store.state_arrays(prefix=f"episodic/{i}"))
        return out

    def load_state_arrays(self, arrays: "dict[str, np.ndarray]"):
        for i, store in enumerate(self.stores):
            store.load_state_arrays(arrays, prefix=f"episodic/{i}")


@dataclass
class StepDraws:
    """All randomness of one training step, frozen up front."""

    k: np.ndarray          # (B,) step indices in 1..K
    eps_forward: np.ndarray  # (B, H, N)
    mask: np.ndarray       # (B, H, N) mixup mask
    eps_prior: np.ndarray  # (B*N, d)
    eps_cond: np.ndarray   # (B*N, d)


def draw_step_randomness(rng: np.random.Generator, cfg: TrainConfig, batch: int) -> StepDraws:
    rows = batch * cfg.n_channels
    return StepDraws(
        k=rng.integers(1, cfg.diffusion_steps + 1, size=batch),
        eps_forward=rng.standard_normal((batch, cfg.horizon, cfg.n_channels)),
        mask=rng.uniform(0.0, 1.0, size=(batch, cfg.horizon, cfg.n_channels)),
        eps_prior=rng.standard_normal((rows, cfg.latent_dim)),
        eps_cond=rng.standard_normal((rows, cfg.latent_dim)),
    )


@dataclass
class LossBreakdown:
    total: float
    condition: float
    l1: float
    l2: float
    per_sample_condition: np.ndarray   # (B,)
    queries: np.ndarray                # (B, N, d) for episodic selection


class ForecastModel:
    """Memory-conditioned few-step diffusion forecaster."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        dtype = np.float64 if cfg.precision == "double" else np.float32
        self.params = ParamStore(dtype)
        self.enc = Mlp(self.params, "encoder",
                       [cfg.lookback, *cfg.enc_hidden, cfg.latent_dim], "relu", rng)
        den_in = 2 * cfg.horizon + cfg.embed_dim
        self.den = Mlp(self.params, "denoiser",
                       [den_in, *cfg.den_hidden, cfg.horizon], "silu", rng)
        self.cp = conditioning.init_condition_params(
            self.params, cfg.latent_dim, cfg.horizon, cfg.log_var_init, rng)
        self.semantic = SemanticBank(self.params, cfg, rng) if cfg.use_semantic else None
        self.episodic = EpisodicBank(cfg) if cfg.use_episodic else None
        # without any memory the prior mean is identically zero, so the
        # query bypass is the only conditioning path left: force it on
        self.query_bypass = cfg.condition_uses_query or (
            self.semantic is None and self.episodic is None)
        self.sched = make_schedule(cfg.diffusion_steps, cfg.schedule_kind,
                                   cfg.beta_min, cfg.beta_max)

    # -- training loss ----------------------------------------------------

    def _channel_rows(self, blocks: np.ndarray) -> np.ndarray:
        """(B, T, N) time-major blocks to (B*N, T) channel rows."""
        return np.ascontiguousarray(blocks.transpose(0, 2, 1)).reshape(-1, blocks.shape[1])

    def _rows_to_blocks(self, rows: np.ndarray, batch: int) -> np.ndarray:
        n = self.cfg.n_channels
        return rows.reshape(batch, n, -1).transpose(0, 2, 1)

    def loss(self, batch_x: np.ndarray, batch_y: np.ndarray, draws: StepDraws,
             compute_grad: bool = True, count_freq: bool = True) -> LossBreakdown:
        """Total training objective; optionally accumulates exact gradients.

        batch_x: (B, L, N) lookbacks, batch_y: (B, H, N) horizons, already
        normalized. Gradients are ADDED to the parameter buffers; the
        caller zeroes them at the start of the step.
        """
        cfg = self.cfg
        batch = batch_x.shape[0]
        if batch_x.shape[1:] != (cfg.lookback, cfg.n_channels):
            raise DataError(f"lookback batch shaped {batch_x.shape}, "
                            f"expected (*, {cfg.lookback}, {cfg.n_channels})")
        if batch_y.shape[1:] != (cfg.horizon, cfg.n_channels):
            raise DataError(f"horizon batch shaped {batch_y.shape}, "
                            f"expected (*, {cfg.horizon}, {cfg.n_channels})")

        x_rows = self._channel_rows(batch_x)
        y_rows = self._channel_rows(batch_y)
        h_rows, enc_trace = conditioning.encode_rows(self.enc, x_rows)

        if self.semantic is not None:
            m_sem, sem_traces = self.semantic.recall(h_rows)
            l1_sum, l2_sum, loss_traces = self.semantic.losses(h_rows, cfg.margin)
        else:
            m_sem, sem_traces, loss_traces = np.zeros_like(h_rows), None, None
            l1_sum = l2_sum = 0.0
        if self.episodic is not None:
            m_epi, epi_traces = self.episodic.recall(h_rows, update_freq=count_freq)
        else:
            m_epi, epi_traces = np.zeros_like(h_rows), None

        m, prior_trace = conditioning.memory_prior(
            self.cp, m_sem, m_epi, sample=True, eps=draws.eps_prior)
        head_queries = h_rows if self.query_bypass else np.zeros_like(h_rows)
        c_rows, head_trace = conditioning.condition_head(
            self.cp, m, head_queries, sample=True, eps=draws.eps_cond)
        c = self._rows_to_blocks(c_rows, batch)
        c_mix = draws.mask * c + (1.0 - draws.mask) * batch_y

        abar = self.sched.alpha_bar[draws.k - 1][:, None, None]
        y_k = np.sqrt(abar) * batch_y + np.sqrt(1.0 - abar) * draws.eps_forward

        embeds = np.stack([denoiser.step_embedding(int(k), cfg.embed_dim) for k in draws.k])
        embed_rows = np.repeat(embeds, cfg.n_channels, axis=0)
        y0_rows, den_trace = denoiser.denoise_rows(
            self.den, self._channel_rows(y_k), self._channel_rows(c_mix), embed_rows)

        resid = y0_rows - y_rows
        per_sample = (resid * resid).reshape(batch, -1).mean(axis=1)
        l_cond = float(per_sample.mean())
        l1 = l1_sum / batch
        l2 = l2_sum / batch
        total = l_cond + cfg.alpha1 * l1 + cfg.alpha2 * l2

        if compute_grad:
            d_y0 = 2.0 * resid / resid.size
            d_yk_rows, d_cmix_rows = denoiser.denoise_rows_backward(
                self.den, den_trace, d_y0, cfg.horizon)
            del d_yk_rows  # y_k depends only on data and frozen noise
            d_cmix = self._rows_to_blocks(d_cmix_rows, batch)
            d_c_rows = self._channel_rows(draws.mask * d_cmix)
            d_m, d_h = conditioning.condition_head_backward(self.cp, head_trace, d_c_rows)
            if not self.query_bypass:
                d_h = np.zeros_like(d_h)
            d_u = conditioning.memory_prior_backward(self.cp, prior_trace, d_m)
            if self.semantic is not None:
                d_h = d_h + self.semantic.recall_backward(sem_traces, d_u)
                d_h = d_h + self.semantic.losses_backward(
                    loss_traces, cfg.alpha1 / batch, cfg.alpha2 / batch)
            if self.episodic is not None:
                d_h = d_h + self.episodic.recall_backward(epi_traces, d_u)
            self.enc.backward(enc_trace, d_h)

        queries = h_rows.reshape(batch, cfg.n_channels, cfg.latent_dim)
        return LossBreakdown(total, l_cond, l1, l2, per_sample, queries)

    # -- inference ----------------------------------------------------------

    def condition_for(self, x0: np.ndarray):
        """Deterministic inference-time condition (H, N) plus the queries."""
        h, _ = conditioning.encode(self.enc, x0)
        m_sem = np.zeros_like(h)
        m_epi = np.zeros_like(h)
        if self.semantic is not None:
            m_sem, _ = self.semantic.recall(h)
        if self.episodic is not None:
            m_epi, _ = self.episodic.recall(h, update_freq=False)
        m, _ = conditioning.memory_prior(self.cp, m_sem, m_epi, sample=False)
        head_queries = h if self.query_bypass else np.zeros_like(h)
        c_rows, _ = conditioning.condition_head(self.cp, m, head_queries, sample=False)
        return c_rows.T, h

    def forecast(self, x0: np.ndarray, rng: np.random.Generator,
                 substeps: "int | None" = None) -> np.ndarray:
        """Predict the (H, N) horizon for one normalized lookback block."""
        cfg = self.cfg
        c, _ = self.condition_for(x0)

        def predict(y_k, k):
            return denoiser.denoise_predict(self.den, y_k, k, c, cfg.embed_dim)

        if cfg.ancestral:
            return denoiser.ddpm_sample(predict, cfg.horizon, cfg.n_channels, self.sched, rng)
        return denoiser.ddim_sample(predict, cfg.horizon, cfg.n_channels, self.sched,
                                    substeps or cfg.substeps, rng)

    def attention_scores(self, x0: np.ndarray):
        """(semantic (N, N1) or None, episodic (N, records) or None) for one window."""
        h, _ = conditioning.encode(self.enc, x0)
        sem = self.semantic.scores(h) if self.semantic is not None else None
        epi = self.episodic.scores(h) if self.episodic is not None else None
        return sem, epi

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> "dict[str, np.ndarray]":
        arrays = {f"param/{p.id}": p.values for p in self.params}
        if self.episodic is not None:
            arrays.update(self.episodic.state_arrays())
        return arrays

    def load_state_arrays(self, arrays: "dict[str, np.ndarray]"):
        for p in self.params:
            stored = arrays[f"param/{p.id}"]
            if stored.shape != p.values.shape:
                raise DataError(f"checkpoint shape {stored.shape} != {p.values.shape} "
                                f"for parameter {p.id!r}")
            p.values[...] = stored
        if self.episodic is not None:
            self.episodic.load_state_arrays(arrays)
