import math

import numpy as np
import pytest

from mentionrl import corpus as cp
from mentionrl import nnkit
from mentionrl.estimator import CnnEstimator, FrozenEstimatorError, train_estimator


def make_sentence(ids, head=0, tail=None, relation=0):
    tail = len(ids) - 1 if tail is None else tail
    return cp.Sentence(
        tokens=[f"t{i}" for i in ids],
        token_ids=list(ids),
        head_idx=head,
        tail_idx=tail,
        relation_id=relation,
    )


def tiny_estimator(**kw):
    defaults = dict(vocab_size=10, n_relations=3, word_dim=4, pos_dim=2, feature_maps=5, seed=1)
    defaults.update(kw)
    return CnnEstimator(**defaults)


class TestEncode:
    def test_shape(self):
        est = tiny_estimator()
        s = make_sentence([2, 3, 4, 5, 6])
        assert est.encode(s).shape == (5, est.encode_dim)

    def test_identical_tokens_differ_only_in_position_columns(self):
        est = tiny_estimator()
        s = make_sentence([7, 7, 7, 7], head=0, tail=3)
        x = est.encode(s)
        np.testing.assert_allclose(x[0, : est.word_dim], x[2, : est.word_dim])
        assert not np.allclose(x[0, est.word_dim :], x[2, est.word_dim :])

    def test_all_pad_rows_equal_pad_embedding_concat(self):
        est = tiny_estimator()
        s = make_sentence([cp.PAD_ID, cp.PAD_ID, cp.PAD_ID], head=0, tail=2)
        x = est.encode(s)
        np.testing.assert_allclose(x[1, : est.word_dim], est.params["word_emb"].value[cp.PAD_ID])


class TestForward:
    def test_zero_output_layer_gives_uniform(self):
        est = tiny_estimator(n_relations=4)
        est.params["out_w"].value[...] = 0.0
        est.params["out_b"].value[...] = 0.0
        s = make_sentence([2, 3, 4])
        probs, _, _ = est.forward(s)
        np.testing.assert_allclose(probs, 0.25, atol=1e-15)
        assert est.prob_of(s, 1) == pytest.approx(0.25, abs=1e-12)

    def test_probs_sum_to_one(self):
        est = tiny_estimator()
        rng = np.random.default_rng(2)
        for _ in range(10):
            s = make_sentence(rng.integers(0, 10, size=rng.integers(3, 8)))
            probs, _, _ = est.forward(s)
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_tiny_network(self):
        # d_s=2, n_r=2, T=3: single window, every stage computed directly.
        est = CnnEstimator(vocab_size=4, n_relations=2, word_dim=1, pos_dim=1, feature_maps=2, seed=0)
        est.params["word_emb"].value[...] = np.array([[0.0], [0.1], [0.2], [0.3]])
        est.params["pos_head_emb"].value[...] = 0.01 * np.arange(61)[:, None]
        est.params["pos_tail_emb"].value[...] = 0.02 * np.arange(61)[:, None]
        est.params["conv_w"].value[...] = np.arange(1, 19).reshape(2, 9) * 0.05
        est.params["conv_b"].value[...] = np.array([0.1, -0.1])
        est.params["out_w"].value[...] = np.array([[1.0, -1.0], [0.5, 0.25]])
        est.params["out_b"].value[...] = np.array([0.0, 0.2])
        s = make_sentence([1, 2, 3], head=0, tail=2)

        rows = []
        for j, tid in enumerate([1, 2, 3]):
            rows.extend(
                [0.1 * tid, 0.01 * (j - 0 + 30), 0.02 * (j - 2 + 30)]
            )
        window = np.array(rows)
        conv = est.params["conv_w"].value @ window + est.params["conv_b"].value
        rep = np.tanh(conv)
        logits = est.params["out_w"].value @ rep + est.params["out_b"].value
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()

        probs, pooled, rep_out = est.forward(s)
        np.testing.assert_allclose(pooled, conv, atol=1e-12)
        np.testing.assert_allclose(rep_out, rep, atol=1e-12)
        np.testing.assert_allclose(probs, expected, atol=1e-12)

    def test_prob_floor(self):
        est = tiny_estimator()
        est.params["out_b"].value[...] = np.array([-10000.0, 0.0, 0.0])
        s = make_sentence([2, 3, 4])
        assert est.prob_of(s, 0) >= 1e-12

    def test_relation_out_of_range(self):
        est = tiny_estimator()
        with pytest.raises(ValueError):
            est.prob_of(make_sentence([2, 3, 4]), 7)

    def test_inference_deterministic(self):
        est = tiny_estimator()
        s = make_sentence([2, 3, 4, 5])
        p1, _, _ = est.forward(s)
        p2, _, _ = est.forward(s)
        np.testing.assert_array_equal(p1, p2)

    def test_frozen_cache_consistent(self):
        est = tiny_estimator()
        s = make_sentence([2, 3, 4, 5])
        before = est.forward(s)[0].copy()
        est.freeze()
        np.testing.assert_allclose(est.forward(s)[0], before, atol=1e-15)
        np.testing.assert_array_equal(est.forward(s)[0], est.forward(s)[0])


class TestGradients:
    def test_full_network_gradient_check(self):
        est = tiny_estimator(vocab_size=12, feature_maps=6, seed=3)
        rng = np.random.default_rng(4)
        s = make_sentence(rng.integers(0, 12, size=6), head=1, tail=4, relation=2)
        est.params.zero_grads()
        est.accumulate_gradients(s)
        err = nnkit.finite_diff_check(
            lambda p: est.loss(s), est.params, eps=1e-5, n_coords=60, rng_seed=5
        )
        assert err < 1e-4

    def test_gradient_check_every_entry(self):
        est = tiny_estimator(vocab_size=8, feature_maps=4, seed=6)
        s = make_sentence([2, 5, 3, 7, 1], head=0, tail=3, relation=1)
        est.params.zero_grads()
        est.accumulate_gradients(s)
        for name in est.params.names():
            err = nnkit.finite_diff_check(
                lambda p: est.loss(s), est.params, eps=1e-5, n_coords=10,
                rng_seed=7, entries=[name],
            )
            assert err < 1e-4, name


@pytest.fixture(scope="module")
def small_corpus():
    cfg = cp.GenConfig(3, 2, 12, 4, 0.0, seed=8)
    return cp.generate_synthetic(cfg)


class TestTraining:

    def test_initial_loss_near_log_n_relations(self, small_corpus):
        _, log = train_estimator(
            small_corpus, epochs=0, seed=1, word_dim=8, pos_dim=2, feature_maps=10
        )
        assert log[0] == pytest.approx(math.log(3), rel=0.1)

    def test_loss_decreases(self, small_corpus):
        _, log = train_estimator(
            small_corpus, lr=0.02, batch_size=16, epochs=8, dropout=0.0, seed=2,
            word_dim=8, pos_dim=2, feature_maps=10,
        )
        assert log[-1] < log[0]

    def test_seed_determinism(self, small_corpus):
        e1, log1 = train_estimator(
            small_corpus, epochs=2, seed=3, word_dim=6, pos_dim=2, feature_maps=8
        )
        e2, log2 = train_estimator(
            small_corpus, epochs=2, seed=3, word_dim=6, pos_dim=2, feature_maps=8
        )
        assert log1 == log2
        for name in e1.params.names():
            np.testing.assert_array_equal(e1.params[name].value, e2.params[name].value)

    def test_learns_separable_synthetic_data(self, small_corpus):
        est, _ = train_estimator(
            small_corpus, lr=0.5, batch_size=16, epochs=40, dropout=0.0, seed=4,
            word_dim=8, pos_dim=2, feature_maps=16,
        )
        train = small_corpus.subset("train")
        mean_p = np.mean([est.prob_of(s, s.relation_id) for s in train.sentences()])
        assert mean_p > 0.9

    def test_frozen_estimator_rejects_training(self, small_corpus):
        est, _ = train_estimator(small_corpus, epochs=0, seed=5, word_dim=4, pos_dim=2, feature_maps=4)
        assert est.frozen
        with pytest.raises(FrozenEstimatorError):
            est.accumulate_gradients(next(small_corpus.sentences()))
        with pytest.raises(FrozenEstimatorError):
            train_estimator(small_corpus, estimator=est)

    def test_batch_larger_than_corpus_uses_full_batch(self, small_corpus):
        est, log = train_estimator(
            small_corpus, batch_size=10_000, epochs=1, seed=6, word_dim=4, pos_dim=2, feature_maps=4
        )
        assert len(log) == 2

    def test_checkpoint_roundtrip(self, small_corpus, tmp_path):
        est, _ = train_estimator(small_corpus, epochs=1, seed=7, word_dim=4, pos_dim=2, feature_maps=4)
        path = tmp_path / "cnn.ckpt"
        est.save(path)
        loaded = CnnEstimator.load(path, frozen=True)
        s = next(small_corpus.sentences())
        assert loaded.frozen
        np.testing.assert_array_equal(loaded.forward(s)[0], est.forward(s)[0])
