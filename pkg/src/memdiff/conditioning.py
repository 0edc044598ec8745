"""Conditioning path: temporal encoder, variational memory prior, condition head.

Each channel's lookback column runs through a shared-weight MLP encoder to
a latent query vector. The two memories are recalled with those queries;
their sum is mapped to the prior mean, sampled by reparameterization
during training, mapped again by the condition head, and concatenated
with the query before projecting to a horizon-length condition column.
All randomness is injected by the caller so a training loss is a pure
function of the parameters once the draws are frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .nn import Mlp, ParamStore, ParamTensor, uniform_fan_in


@dataclass
class ConditionParams:
    """Learnable tensors of the conditioning path (excluding the encoder)."""

    w_prior: ParamTensor      # d x d map on recalled memory sums
    w_cond: ParamTensor       # d x d map on the sampled prior
    log_var_prior: ParamTensor
    log_var_cond: ParamTensor
    proj: ParamTensor         # H x 2d projection of [latent ; query]
    proj_bias: ParamTensor


def init_condition_params(store: ParamStore, latent_dim: int, horizon: int,
                          log_var_init: float, rng: np.random.Generator) -> ConditionParams:
    d = latent_dim
    # Near-identity init for the square maps keeps the recalled-memory signal
    # at full scale from the first step instead of attenuating it ~sqrt(3)x
    # per layer the way fan-in scaling would.
    eye = np.eye(d, dtype=store.dtype)
    jitter = 1.0 / np.sqrt(d)
    return ConditionParams(
        w_prior=store.register("prior/W2", eye + uniform_fan_in(rng, d, (d, d), store.dtype) * jitter),
        w_cond=store.register("cond/W1", eye + uniform_fan_in(rng, d, (d, d), store.dtype) * jitter),
        log_var_prior=store.register("prior/log_var", np.full(d, log_var_init, dtype=store.dtype)),
        log_var_cond=store.register("cond/log_var", np.full(d, log_var_init, dtype=store.dtype)),
        proj=store.register("cond/proj", uniform_fan_in(rng, 2 * d, (horizon, 2 * d), store.dtype)),
        proj_bias=store.register("cond/proj_bias", uniform_fan_in(rng, 2 * d, (horizon,), store.dtype)),
    )


def encode(enc: Mlp, x0: np.ndarray):
    """Lookback block (L, N) to channel queries (N, d); channels independent."""
    x0 = np.asarray(x0)
    if x0.ndim != 2 or x0.shape[0] != enc.in_width:
        raise DataError(f"lookback shape {x0.shape} incompatible with length {enc.in_width}")
    return enc.forward(x0.T)


def encode_rows(enc: Mlp, rows: np.ndarray):
    """Batched variant: rows (R, L) of channel columns, any grouping."""
    return enc.forward(rows)


@dataclass
class PriorTrace:
    memory_sum: np.ndarray
    eps: "np.ndarray | None"
    sigma: "np.ndarray | None"


def memory_prior(cp: ConditionParams, m_sem: np.ndarray, m_epi: np.ndarray,
                 sample: bool, eps: "np.ndarray | None" = None):
    """Sampled (or mean) prior per channel row: W2 (m_e + m_s) [+ sigma * eps]."""
    u = m_sem + m_epi
    mean = u @ cp.w_prior.values.T
    if not sample:
        return mean, PriorTrace(u, None, None)
    sigma = np.exp(0.5 * cp.log_var_prior.values)
    return mean + sigma * eps, PriorTrace(u, eps, sigma)


def memory_prior_backward(cp: ConditionParams, trace: PriorTrace, upstream: np.ndarray):
    """Returns gradient w.r.t. the memory sum (m_e + m_s)."""
    if trace.eps is not None:
        cp.log_var_prior.grad += 0.5 * np.sum(upstream * trace.eps * trace.sigma, axis=0)
    cp.w_prior.grad += upstream.T @ trace.memory_sum
    return upstream @ cp.w_prior.values


@dataclass
class HeadTrace:
    m: np.ndarray
    queries: np.ndarray
    z: np.ndarray
    eps: "np.ndarray | None"
    sigma: "np.ndarray | None"


def condition_head(cp: ConditionParams, m: np.ndarray, queries: np.ndarray,
                   sample: bool, eps: "np.ndarray | None" = None):
    """Per-channel condition columns: project [W1 m (+ noise) ; query] to R^H.

    Returns condition rows (R, H); the caller reshapes per sample to (H, N).
    """
    latent = m @ cp.w_cond.values.T
    sigma = None
    if sample:
        sigma = np.exp(0.5 * cp.log_var_cond.values)
        latent = latent + sigma * eps
    z = np.concatenate([latent, queries], axis=1)
    c_rows = z @ cp.proj.values.T + cp.proj_bias.values
    return c_rows, HeadTrace(m, queries, z, eps if sample else None, sigma)


def condition_head_backward(cp: ConditionParams, trace: HeadTrace, upstream: np.ndarray):
    """Returns (d_m, d_queries)."""
    cp.proj.grad += upstream.T @ trace.z
    cp.proj_bias.grad += upstream.sum(axis=0)
    dz = upstream @ cp.proj.values
    d = trace.m.shape[1]
    d_latent, d_queries = dz[:, :d], dz[:, d:]
    if trace.eps is not None:
        cp.log_var_cond.grad += 0.5 * np.sum(d_latent * trace.eps * trace.sigma, axis=0)
    cp.w_cond.grad += d_latent.T @ trace.m
    d_m = d_latent @ cp.w_cond.values
    return d_m, d_queries


def future_mixup(c: np.ndarray, y0: np.ndarray, mask: "np.ndarray | None", training: bool):
    """Blend the condition with the ground-truth future through a uniform mask.

    Training: c_mix = mask * c + (1 - mask) * y0 elementwise, mask entries
    in [0, 1). Inference has no ground truth; the condition passes through
    unchanged (mode flag enforced here, mask ignored).
    """
    if not training:
        return c, None
    if mask is None or mask.shape != c.shape:
        raise DataError("training-mode mixup requires a mask shaped like c")
    if c.shape != y0.shape:
        raise DataError(f"condition shape {c.shape} != target shape {y0.shape}")
    return mask * c + (1.0 - mask) * y0, mask


def draw_mixup_mask(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=shape)
