import numpy as np
import pytest

from memdiff import SynthSpec, TrainConfig, Trainer, prepare, synth_generate


def tiny_config(**overrides) -> TrainConfig:
    """Desk-scale config used across the suite (and the gradient check)."""
    base = dict(
        lookback=8, horizon=4, n_channels=2, latent_dim=4,
        enc_hidden=[8], den_hidden=[16, 16], embed_dim=8,
        diffusion_steps=4, semantic_size=3, episodic_size=4, queue_size=2,
        recall_top_k=2, batch_size=2, epochs=1, lr=1e-3,
        dataset="synthetic", synth_length=400, synth_channels=2,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base).validate()


def tiny_trainer(cfg=None, **overrides) -> Trainer:
    cfg = cfg or tiny_config(**overrides)
    spec = SynthSpec(length=cfg.synth_length, channels=cfg.n_channels,
                     noise=cfg.synth_noise, motif_rate=cfg.synth_motif_rate)
    ds, _ = synth_generate(spec, cfg.seed)
    return Trainer(cfg, prepare(cfg, ds))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
