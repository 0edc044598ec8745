import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memdiff import ParamStore, SemanticMemory, cosine_score, finite_diff_check
from memdiff.attention import WEIGHT_EPS, clamp_normalize
from memdiff.errors import NumericError


def make_memory(n_blocks, dim, seed=0):
    store = ParamStore()
    blocks = store.register("semantic/blocks",
                            np.random.default_rng(seed).standard_normal((n_blocks, dim)))
    return store, SemanticMemory(blocks)


class TestCosineScore:
    def test_self_similarity(self):
        v = np.array([0.3, -2.0, 1.1])
        assert cosine_score(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_opposite(self):
        assert cosine_score(np.array([1.0, 0.0]), np.array([-1.0, 0.0])) == -1.0

    def test_zero_norm_errors(self):
        with pytest.raises(NumericError):
            cosine_score(np.zeros(2), np.array([1.0, 0.0]))
        with pytest.raises(NumericError):
            cosine_score(np.array([1.0, 0.0]), np.zeros(2))


class TestRecall:
    def test_single_block_returned_exactly(self):
        store, mem = make_memory(1, 4)
        q = np.array([[5.0, 1.0, -2.0, 0.5]])
        out, _ = mem.recall(q)
        np.testing.assert_allclose(out[0], store["semantic/blocks"].values[0], atol=1e-12)

    def test_parallel_query_dominates(self):
        store, mem = make_memory(2, 2)
        store["semantic/blocks"].values[...] = np.array([[2.0, 0.0], [0.0, 3.0]])
        out, trace = mem.recall(np.array([[1.0, 0.0]]))
        # scores are (1, 0): clamp+eps weights are (1+eps, eps)/(1+2eps)
        want_w = np.array([1.0 + WEIGHT_EPS, WEIGHT_EPS]) / (1.0 + 2 * WEIGHT_EPS)
        np.testing.assert_allclose(trace.weights[0], want_w, rtol=1e-12)
        np.testing.assert_allclose(out[0], want_w @ store["semantic/blocks"].values, rtol=1e-12)

    def test_weights_sum_to_one(self):
        _, mem = make_memory(6, 5, seed=2)
        q = np.random.default_rng(3).standard_normal((40, 5))
        _, trace = mem.recall(q)
        np.testing.assert_allclose(trace.weights.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(trace.weights >= 0)

    def test_all_negative_scores_uniform_weights(self):
        store, mem = make_memory(3, 2)
        store["semantic/blocks"].values[...] = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        _, trace = mem.recall(np.array([[-1.0, -1.0]]))
        np.testing.assert_allclose(trace.weights[0], np.ones(3) / 3.0)

    def test_identical_channels_identical_memories(self):
        _, mem = make_memory(5, 3, seed=4)
        q = np.random.default_rng(5).standard_normal(3)
        out, _ = mem.recall(np.stack([q, q]))
        np.testing.assert_array_equal(out[0], out[1])

    def test_recall_gradient_matches_finite_differences(self):
        store, mem = make_memory(4, 3, seed=6)
        rng = np.random.default_rng(7)
        q = rng.standard_normal((5, 3))
        g = rng.standard_normal((5, 3))

        def loss():
            out, _ = mem.recall(q)
            return float(np.sum(out * g))

        store.zero_grads()
        _, trace = mem.recall(q)
        dq = mem.recall_backward(trace, g)
        report = finite_diff_check(loss, store, tolerance=1e-6, h=1e-6)
        assert report.passed, report.max_rel_error
        # query gradient against finite differences
        h = 1e-6
        for r in range(2):
            for i in range(3):
                qp, qm = q.copy(), q.copy()
                qp[r, i] += h
                qm[r, i] -= h
                fd = (np.sum(mem.recall(qp)[0] * g) - np.sum(mem.recall(qm)[0] * g)) / (2 * h)
                np.testing.assert_allclose(dq[r, i], fd, rtol=1e-5, atol=1e-9)


class TestLosses:
    def test_exact_match_contributes_zero(self):
        store, mem = make_memory(2, 2)
        store["semantic/blocks"].values[...] = np.array([[1.0, 0.0], [0.0, 10.0]])
        q = np.array([[1.0, 0.0]])
        l1, l2, _ = mem.losses(q, margin=1.0)
        assert l1 == 0.0
        # second block is far: hinge = 0 - |q - b2|^2 + 1 < 0
        assert l2 == 0.0

    def test_hand_arithmetic_two_blocks(self):
        store, mem = make_memory(2, 2)
        store["semantic/blocks"].values[...] = np.array([[1.0, 0.0], [0.0, 1.0]])
        l1, l2, _ = mem.losses(np.array([[1.0, 0.0]]), margin=1.0)
        assert l1 == 0.0
        assert l2 == max(0.0 - 2.0 + 1.0, 0.0) == 0.0

    def test_tie_with_zero_margin(self):
        store, mem = make_memory(2, 2)
        store["semantic/blocks"].values[...] = np.array([[1.0, 1.0], [1.0, 1.0]])
        l1, l2, _ = mem.losses(np.array([[2.0, 2.0]]), margin=0.0)
        assert l2 == 0.0

    def test_single_block_no_contrastive(self):
        _, mem = make_memory(1, 3, seed=8)
        l1, l2, _ = mem.losses(np.ones((2, 3)), margin=1.0)
        assert l2 == 0.0
        assert l1 >= 0.0

    def test_monotone_in_margin(self):
        _, mem = make_memory(5, 4, seed=9)
        q = np.random.default_rng(10).standard_normal((8, 4))
        values = [mem.losses(q, margin=m)[1] for m in (0.0, 0.5, 1.0, 2.0)]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))

    def test_nearest_tiebreak_lowest_index(self):
        store, mem = make_memory(3, 2)
        store["semantic/blocks"].values[...] = np.array([[2.0, 0.0], [4.0, 0.0], [0.0, 1.0]])
        # blocks 0 and 1 have identical cosine score 1.0 for this query
        _, _, trace = mem.losses(np.array([[1.0, 0.0]]), margin=0.5)
        assert trace.nearest[0] == 0
        assert trace.second[0] == 1

    def test_loss_gradients_match_finite_differences(self):
        store, mem = make_memory(4, 3, seed=11)
        q = np.random.default_rng(12).standard_normal((6, 3))
        c1, c2 = 0.7, 0.4

        def loss():
            l1, l2, _ = mem.losses(q, margin=0.8)
            return c1 * l1 + c2 * l2

        store.zero_grads()
        _, _, trace = mem.losses(q, margin=0.8)
        dq = mem.losses_backward(trace, c1, c2)
        report = finite_diff_check(loss, store, tolerance=1e-5, h=1e-6)
        assert report.passed, report.max_rel_error
        h = 1e-6
        for r in range(2):
            for i in range(3):
                qp, qm = q.copy(), q.copy()
                qp[r, i] += h
                qm[r, i] -= h
                lp = mem.losses(qp, 0.8)
                lm = mem.losses(qm, 0.8)
                fd = (c1 * (lp[0] - lm[0]) + c2 * (lp[1] - lm[1])) / (2 * h)
                np.testing.assert_allclose(dq[r, i], fd, rtol=1e-5, atol=1e-8)


class TestUpdateDynamics:
    def test_one_adam_step_moves_nearest_block(self):
        # gradient must reach the blocks through both recall and the losses
        from memdiff import Adam
        store, mem = make_memory(3, 4, seed=13)
        before = store["semantic/blocks"].values.copy()
        q = np.random.default_rng(14).standard_normal((1, 4))
        store.zero_grads()
        out, trace = mem.recall(q)
        mem.recall_backward(trace, np.ones_like(out))
        _, _, ltrace = mem.losses(q, margin=1.0)
        mem.losses_backward(ltrace, 1.0, 1.0)
        Adam(lr=0.01).step(store)
        nearest = ltrace.nearest[0]
        assert not np.allclose(store["semantic/blocks"].values[nearest], before[nearest])

    def test_rejitter_restores_norm(self):
        store, mem = make_memory(3, 4, seed=15)
        store["semantic/blocks"].values[1] = 1e-12
        mem.rejitter(np.random.default_rng(16))
        norms = np.linalg.norm(store["semantic/blocks"].values, axis=1)
        assert np.all(norms > 1e-8)


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=2, max_value=6),
       st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_weights_convex_combination_property(n_blocks, dim, seed):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(-1.0, 1.0, size=(4, n_blocks))
    weights, _ = clamp_normalize(scores)
    assert np.all(weights >= 0)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-6)
