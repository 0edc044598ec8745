import numpy as np
import pytest

from conftest import tiny_config, tiny_trainer

from memdiff import ForecastModel, draw_step_randomness, finite_diff_check
from memdiff.errors import DataError


def seeded_model(cfg, seed=0):
    return ForecastModel(cfg, np.random.default_rng(seed))


def random_batch(cfg, rng, batch=None):
    b = batch or cfg.batch_size
    return (rng.standard_normal((b, cfg.lookback, cfg.n_channels)),
            rng.standard_normal((b, cfg.horizon, cfg.n_channels)))


def populate_episodic(model, rng, updates=3):
    if model.episodic is None:
        return
    for _ in range(updates):
        model.episodic.update(rng.standard_normal((model.cfg.n_channels,
                                                   model.cfg.latent_dim)))


class TestLossGradients:
    @pytest.mark.parametrize("overrides", [
        {},                                            # full model
        {"use_semantic": False},
        {"use_episodic": False},
        {"use_semantic": False, "use_episodic": False},
        {"shared_memory": False},
    ])
    def test_full_loss_matches_finite_differences(self, overrides, rng):
        cfg = tiny_config(**overrides)
        model = seeded_model(cfg, seed=3)
        populate_episodic(model, rng)
        batch_x, batch_y = random_batch(cfg, rng)
        draws = draw_step_randomness(rng, cfg, cfg.batch_size)

        def loss():
            return model.loss(batch_x, batch_y, draws,
                              compute_grad=False, count_freq=False).total

        model.params.zero_grads()
        out = model.loss(batch_x, batch_y, draws, count_freq=False)
        assert np.isfinite(out.total)
        report = finite_diff_check(loss, model.params, tolerance=1e-4,
                                   max_coords_per_param=24, rng=rng)
        assert report.passed, (report.max_rel_error, report.worst_param)


class TestAblationWiring:
    def test_without_both_reduces_to_condition_loss(self, rng):
        cfg = tiny_config(use_semantic=False, use_episodic=False, alpha1=0.0, alpha2=0.0)
        model = seeded_model(cfg)
        batch_x, batch_y = random_batch(cfg, rng)
        out = model.loss(batch_x, batch_y, draw_step_randomness(rng, cfg, 2),
                         compute_grad=False)
        assert out.l1 == 0.0 and out.l2 == 0.0
        assert out.total == out.condition

    def test_semantic_off_zeroes_compactness_losses(self, rng):
        cfg = tiny_config(use_semantic=False, alpha1=0.5, alpha2=0.5)
        model = seeded_model(cfg)
        batch_x, batch_y = random_batch(cfg, rng)
        out = model.loss(batch_x, batch_y, draw_step_randomness(rng, cfg, 2),
                         compute_grad=False)
        assert out.l1 == 0.0 and out.l2 == 0.0

    def test_memory_terms_enter_total(self, rng):
        cfg = tiny_config(alpha1=0.3, alpha2=0.2)
        model = seeded_model(cfg)
        batch_x, batch_y = random_batch(cfg, rng)
        out = model.loss(batch_x, batch_y, draw_step_randomness(rng, cfg, 2),
                         compute_grad=False)
        assert out.l1 > 0.0
        np.testing.assert_allclose(out.total, out.condition + 0.3 * out.l1 + 0.2 * out.l2)


class TestChannelSharing:
    def duplicated_lookback(self, cfg, rng):
        col = rng.standard_normal(cfg.lookback)
        third = rng.standard_normal(cfg.lookback)
        cols = [col, col] + [third] * (cfg.n_channels - 2)
        return np.stack(cols[:cfg.n_channels], axis=1)

    def test_shared_memory_duplicates_recall_and_forecast(self, rng):
        cfg = tiny_config(n_channels=3, synth_channels=3, episodic_size=6, queue_size=3)
        model = seeded_model(cfg, seed=5)
        populate_episodic(model, rng)
        x0 = self.duplicated_lookback(cfg, rng)
        c, h = model.condition_for(x0)
        np.testing.assert_array_equal(h[0], h[1])
        np.testing.assert_array_equal(c[:, 0], c[:, 1])
        pred = model.forecast(x0, np.random.default_rng(9))
        np.testing.assert_array_equal(pred[:, 0], pred[:, 1])
        assert not np.allclose(pred[:, 0], pred[:, 2])

    def test_unshared_memory_breaks_duplication(self, rng):
        cfg = tiny_config(n_channels=3, synth_channels=3, episodic_size=6, queue_size=3,
                          shared_memory=False)
        model = seeded_model(cfg, seed=5)
        x0 = self.duplicated_lookback(rng=rng, cfg=cfg)
        c, h = model.condition_for(x0)
        np.testing.assert_array_equal(h[0], h[1])  # encoder is still shared
        assert not np.allclose(c[:, 0], c[:, 1])   # memories are not
        pred = model.forecast(x0, np.random.default_rng(9))
        assert not np.allclose(pred[:, 0], pred[:, 1])


class TestConditionRouting:
    def test_memory_only_routing_ignores_query_in_head(self, rng):
        cfg = tiny_config(condition_uses_query=False)
        model = seeded_model(cfg, seed=8)
        x0 = rng.standard_normal((cfg.lookback, cfg.n_channels))
        c1, _ = model.condition_for(x0)
        # a second lookback with identical queries is impossible to build
        # directly, but zeroing the query half means c depends on x0 only
        # through the recalled memories; with an empty episodic store and
        # the same semantic recall the condition must match
        h, _ = __import__("memdiff.conditioning", fromlist=["encode"]).encode(model.enc, x0)
        m_sem, _ = model.semantic.recall(h)
        from memdiff.conditioning import condition_head, memory_prior
        m, _ = memory_prior(model.cp, m_sem, np.zeros_like(m_sem), sample=False)
        c_manual, _ = condition_head(model.cp, m, np.zeros_like(h), sample=False)
        np.testing.assert_array_equal(c1, c_manual.T)

    def test_memory_only_routing_gradcheck(self, rng):
        cfg = tiny_config(condition_uses_query=False)
        model = seeded_model(cfg, seed=9)
        populate_episodic(model, rng)
        batch_x, batch_y = random_batch(cfg, rng)
        draws = draw_step_randomness(rng, cfg, cfg.batch_size)

        def loss():
            return model.loss(batch_x, batch_y, draws,
                              compute_grad=False, count_freq=False).total

        model.params.zero_grads()
        model.loss(batch_x, batch_y, draws, count_freq=False)
        report = finite_diff_check(loss, model.params, tolerance=1e-4,
                                   max_coords_per_param=16, rng=rng)
        assert report.passed, (report.max_rel_error, report.worst_param)

    def test_no_memory_forces_query_bypass(self):
        cfg = tiny_config(use_semantic=False, use_episodic=False,
                          condition_uses_query=False)
        model = seeded_model(cfg)
        assert model.query_bypass


class TestEpisodicIsolation:
    def test_stored_patterns_receive_no_gradient(self, rng):
        cfg = tiny_config()
        model = seeded_model(cfg, seed=7)
        populate_episodic(model, rng)
        snapshot = [rec.pattern.copy() for rec in model.episodic.stores[0]._records()]
        batch_x, batch_y = random_batch(cfg, rng)
        model.params.zero_grads()
        model.loss(batch_x, batch_y, draw_step_randomness(rng, cfg, 2))
        for rec, before in zip(model.episodic.stores[0]._records(), snapshot):
            np.testing.assert_array_equal(rec.pattern, before)
        assert not any(p.id.startswith("episodic") for p in model.params)


class TestTrainerBehavior:
    def test_seeded_runs_bitwise_identical(self):
        snaps = []
        for _ in range(2):
            trainer = tiny_trainer(seed=11, epochs=2)
            trainer.fit()
            snaps.append(trainer.model.params.snapshot())
        assert snaps[0].keys() == snaps[1].keys()
        for key in snaps[0]:
            np.testing.assert_array_equal(snaps[0][key], snaps[1][key])

    def test_nan_batch_aborts_and_rolls_back(self, rng):
        trainer = tiny_trainer()
        cfg = trainer.cfg
        before = trainer.model.params.snapshot()
        bad_x, batch_y = random_batch(cfg, rng)
        bad_x[0, 0, 0] = np.nan
        result = trainer.training_step(bad_x, batch_y)
        assert result.aborted
        assert trainer.incidents
        after = trainer.model.params.snapshot()
        for key in before:
            np.testing.assert_array_equal(before[key], after[key])

    def test_one_episodic_update_per_step(self, rng):
        trainer = tiny_trainer()
        cfg = trainer.cfg
        store = trainer.model.episodic.stores[0]
        for step in range(3):
            batch = random_batch(cfg, rng)
            trainer.training_step(*batch)
            live = len(store.entries) + len(store.queue)
            assert live == min((step + 1) * cfg.n_channels,
                               cfg.episodic_size + cfg.queue_size)

    def test_loss_decreases_on_synthetic_task(self):
        trainer = tiny_trainer(epochs=6, batch_size=8, lr=3e-3, synth_length=600)
        history = trainer.fit()
        totals = [h.total for h in history if not h.aborted]
        tenth = max(len(totals) // 10, 5)
        assert np.median(totals[-tenth:]) < np.median(totals[:tenth])

    def test_checkpoint_roundtrip_identical_forecasts(self, tmp_path, rng):
        trainer = tiny_trainer(epochs=1)
        trainer.fit()
        path = str(tmp_path / "ckpt.bin")
        trainer.save_checkpoint(path)
        clone = tiny_trainer(epochs=1)
        clone.load_checkpoint(path)
        x0 = rng.standard_normal((trainer.cfg.lookback, trainer.cfg.n_channels))
        a = trainer.model.forecast(x0, np.random.default_rng(3))
        b = clone.model.forecast(x0, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_periodic_checkpoint_during_fit(self, tmp_path):
        trainer = tiny_trainer(epochs=2, checkpoint_every=1)
        path = str(tmp_path / "ck.bin")
        trainer.fit(checkpoint_path=path)
        import os
        assert os.path.exists(path)
        clone = tiny_trainer(epochs=2, checkpoint_every=1)
        meta = clone.load_checkpoint(path)
        assert meta["step"] == clone.step_count > 0

    def test_single_precision_flag(self):
        trainer = tiny_trainer(precision="single", epochs=1, synth_length=300)
        trainer.fit()
        assert next(iter(trainer.model.params)).values.dtype == np.float32
        assert np.isfinite(trainer.evaluate("test").mae)

    def test_checkpoints_byte_identical_across_runs(self, tmp_path):
        payloads = []
        for name in ("a", "b"):
            trainer = tiny_trainer(seed=21)
            trainer.fit()
            path = tmp_path / f"{name}.bin"
            trainer.save_checkpoint(str(path))
            payloads.append(path.read_bytes())
        assert payloads[0] == payloads[1]

    def test_evaluate_perfect_prediction_zero_error(self):
        from memdiff.trainer import mae, mse
        block = np.random.default_rng(5).standard_normal((4, 3))
        assert mae(block, block) == 0.0
        assert mse(block, block) == 0.0

    def test_evaluate_constant_offset(self):
        from memdiff.trainer import mae, mse
        block = np.random.default_rng(6).standard_normal((4, 3))
        assert mae(block, block + 0.5) == pytest.approx(0.5)
        assert mse(block, block + 0.5) == pytest.approx(0.25)

    def test_evaluate_untrained_band(self):
        # untrained forecasts stay within a broad multiple of the data scale
        trainer = tiny_trainer(synth_length=500)
        result = trainer.evaluate("test")
        assert 0.0 < result.mae < 10.0
        assert result.n_windows > 0

    def test_grid_search_singleton_and_tie(self):
        from memdiff.trainer import grid_search

        class Fake:
            def __init__(self, mae_value):
                self._mae = mae_value

            def evaluate(self, split):
                class R:
                    pass

                r = R()
                r.mae = self._mae
                return r

        assert grid_search([0.3], [0.7], lambda a1, a2: Fake(1.0)) == (0.3, 0.7)
        # constant objective: tie-break toward the smallest pair
        assert grid_search([0.2, 0.1], [0.4, 0.3], lambda a1, a2: Fake(1.0)) == (0.1, 0.3)

    def test_grid_search_picks_winner(self):
        from memdiff.trainer import grid_search

        class Fake:
            def __init__(self, mae_value):
                self._mae = mae_value

            def evaluate(self, split):
                class R:
                    mae = None
                r = R()
                r.mae = self._mae
                return r

        winner = grid_search([0.0, 1.0], [0.0, 1.0],
                             lambda a1, a2: Fake(0.0 if (a1, a2) == (1.0, 0.0) else 5.0))
        assert winner == (1.0, 0.0)


class TestShapeValidation:
    def test_wrong_lookback_shape_rejected(self, rng):
        cfg = tiny_config()
        model = seeded_model(cfg)
        with pytest.raises(DataError):
            model.loss(rng.standard_normal((2, cfg.lookback + 1, cfg.n_channels)),
                       rng.standard_normal((2, cfg.horizon, cfg.n_channels)),
                       draw_step_randomness(rng, cfg, 2))
