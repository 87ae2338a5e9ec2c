import numpy as np
import pytest

from mentionrl import corpus as cp
from mentionrl import evaluation as ev
from mentionrl import ranking as rk
from mentionrl.extractor import MentionResult


def make_sentence(tokens, gold=None, noise=False, relation=0, head=0, tail=None):
    tail = len(tokens) - 1 if tail is None else tail
    return cp.Sentence(
        tokens=list(tokens),
        token_ids=list(range(2, 2 + len(tokens))),
        head_idx=head,
        tail_idx=tail,
        relation_id=relation,
        gold_mentions=gold,
        is_noise=noise,
    )


class TestSentenceAccuracy:
    def test_all_exact_on_clean(self):
        sents = [make_sentence(["e", "a", "b", "t"], gold=[[1, 2]]) for _ in range(3)]
        mentions = [MentionResult(s, [1, 2], "a b", 0.5) for s in sents]
        result = ev.sentence_accuracy(mentions, None)
        assert result.value == 1.0
        assert not result.undefined

    def test_noise_extraction_counts_incorrect(self):
        clean = [make_sentence(["e", "a", "t"], gold=[[1]]) for _ in range(3)]
        noisy = make_sentence(["e", "x", "t"], gold=[], noise=True)
        mentions = [MentionResult(s, [1], "a", 0.5) for s in clean]
        mentions.append(MentionResult(noisy, [1], "x", 0.1))
        result = ev.sentence_accuracy(mentions, None)
        assert result.value == pytest.approx(0.75)
        assert result.n_extracted == 4 and result.n_correct == 3

    def test_prefix_matches_count(self):
        s = make_sentence(["e", "a", "b", "c", "t"], gold=[[1, 2, 3]])
        assert ev.sentence_accuracy([MentionResult(s, [1], "a", 0.1)], None).value == 1.0
        assert ev.sentence_accuracy([MentionResult(s, [2], "b", 0.1)], None).value == 0.0

    def test_empty_extractions_excluded(self):
        s = make_sentence(["e", "a", "t"], gold=[[1]])
        mentions = [MentionResult(s, [], "", -1.0), MentionResult(s, [1], "a", 0.5)]
        result = ev.sentence_accuracy(mentions, None)
        assert result.value == 1.0 and result.n_extracted == 1

    def test_zero_extractions_flagged(self):
        result = ev.sentence_accuracy([], None)
        assert result.value == 0.0 and result.undefined

    def test_missing_gold_errors(self):
        s = make_sentence(["e", "a", "t"], gold=None)
        with pytest.raises(ValueError):
            ev.sentence_accuracy([MentionResult(s, [1], "a", 0.5)], None)


class TestPrecisionAtK:
    def make_lexicon(self, surfaces_by_rel):
        lex = rk.Lexicon(len(surfaces_by_rel))
        for rel, surfaces in surfaces_by_rel.items():
            lex.per_relation[rel] = [rk.LexiconEntry(s, 1.0, 1) for s in surfaces]
        return lex

    def test_four_of_five(self):
        lex = self.make_lexicon({0: ["a", "b", "c", "d", "e"]})
        gold = {0: {"a", "b", "c", "d", "zz"}}
        assert ev.precision_at_k(lex, gold, 5) == pytest.approx(0.8)

    def test_exact_match_is_one_at_every_k(self):
        lex = self.make_lexicon({0: ["a", "b"], 1: ["c"]})
        gold = {0: {"a", "b"}, 1: {"c"}}
        for k in (1, 2):
            assert ev.precision_at_k(lex, gold, k) == 1.0

    def test_empty_relation_contributes_zero(self):
        lex = self.make_lexicon({0: ["a"], 1: []})
        gold = {0: {"a"}, 1: {"b"}}
        assert ev.precision_at_k(lex, gold, 1) == pytest.approx(0.5)

    def test_range_property(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            surfaces = [f"m{i}" for i in rng.permutation(10)[: rng.integers(1, 8)]]
            lex = self.make_lexicon({0: surfaces})
            gold = {0: set(f"m{i}" for i in rng.permutation(10)[: rng.integers(1, 8)])}
            p = ev.precision_at_k(lex, gold, int(rng.integers(1, 6)))
            assert 0.0 <= p <= 1.0


class TestSelectorMetrics:
    def make_corpus(self, noise_flags):
        sents = [
            make_sentence(["e", "a", "t"], gold=[] if nz else [[1]], noise=nz)
            for nz in noise_flags
        ]
        return cp.Corpus([cp.Bag(0, "e", "t", sents)], cp.Vocabulary(), ["r0"])

    def test_select_all(self):
        corpus = self.make_corpus([False, False, True, False])
        traces = [{"bag": 0, "options": [1, 1, 1, 1]}]
        m = ev.selector_metrics(traces, corpus)
        assert m["recall"] == 1.0
        assert m["precision"] == pytest.approx(0.75)

    def test_perfect_selector(self):
        corpus = self.make_corpus([False, True, False])
        traces = [{"bag": 0, "options": [1, 0, 1]}]
        m = ev.selector_metrics(traces, corpus)
        assert m == {"precision": 1.0, "recall": 1.0}

    def test_hand_confusion_matrix(self):
        corpus = self.make_corpus([False, True, False, True])
        traces = [{"bag": 0, "options": [1, 1, 0, 0]}]
        m = ev.selector_metrics(traces, corpus)
        assert m["precision"] == pytest.approx(0.5)  # tp=1 fp=1
        assert m["recall"] == pytest.approx(0.5)     # fn=1

    def test_integer_identity(self):
        corpus = self.make_corpus([False, True, False, False, True])
        traces = [{"bag": 0, "options": [1, 1, 1, 0, 0]}]
        m = ev.selector_metrics(traces, corpus)
        selected = 3
        assert round(m["precision"] * selected) == 2  # exact tp


class TestFeatureVector:
    def make_lexicon(self):
        lex = rk.Lexicon(3)
        lex.per_relation[2] = [rk.LexiconEntry("was born in", 0.9, 3)]
        lex.per_relation[1] = [rk.LexiconEntry("works at", 0.8, 2)]
        lex.per_relation[0] = []
        return lex

    def test_contained_mention_sets_bit(self):
        s = make_sentence(["He", "WAS", "Born", "In", "Paris"])
        bits = ev.mention_feature_vector(s, self.make_lexicon())
        np.testing.assert_array_equal(bits, [0, 0, 1])

    def test_empty_lexicon_zero_vector(self):
        s = make_sentence(["a", "b", "c"])
        bits = ev.mention_feature_vector(s, rk.Lexicon(3))
        np.testing.assert_array_equal(bits, [0, 0, 0])

    def test_contiguity_required(self):
        s = make_sentence(["was", "definitely", "born", "in", "x"])
        bits = ev.mention_feature_vector(s, self.make_lexicon())
        np.testing.assert_array_equal(bits, [0, 0, 0])

    def test_monotone_in_lexicon(self):
        s = make_sentence(["was", "born", "in", "x"])
        lex = self.make_lexicon()
        before = ev.mention_feature_vector(s, lex).copy()
        lex.per_relation[0] = [rk.LexiconEntry("x", 0.5, 1)]
        after = ev.mention_feature_vector(s, lex)
        assert np.all(after >= before)


class TestLogreg:
    def test_separable_reaches_perfect_f1(self):
        rng = np.random.default_rng(5)
        n_classes = 4
        x, y = [], []
        for _ in range(200):
            label = int(rng.integers(n_classes))
            vec = np.zeros(n_classes)
            vec[label] = 1.0
            x.append(vec)
            y.append(label)
        f1 = ev.logreg_classify(x[:150], y[:150], x[150:], y[150:], epochs=100, seed=1)
        assert f1 == 1.0

    def test_all_zero_features_match_majority_baseline(self):
        y_train = [0] * 30 + [1] * 10
        y_test = [0] * 6 + [1] * 2
        x_train = [np.zeros(2) for _ in y_train]
        x_test = [np.zeros(2) for _ in y_test]
        f1 = ev.logreg_classify(x_train, y_train, x_test, y_test, epochs=50, seed=2)
        majority = np.zeros(len(y_test), dtype=int)
        assert f1 == pytest.approx(ev.macro_f1(y_test, majority))

    def test_seed_determinism(self):
        rng = np.random.default_rng(7)
        x = rng.integers(0, 2, size=(100, 3)).astype(float)
        y = rng.integers(0, 3, size=100)
        f1a = ev.logreg_classify(x[:70], y[:70], x[70:], y[70:], seed=9)
        f1b = ev.logreg_classify(x[:70], y[:70], x[70:], y[70:], seed=9)
        assert f1a == f1b

    def test_single_class_train_rejected(self):
        with pytest.raises(ValueError):
            ev.logreg_classify([np.zeros(2)] * 5, [1] * 5, [np.zeros(2)], [1])


class TestMacroF1:
    def test_hand_case(self):
        y_true = [0, 0, 1, 1]
        y_pred = [0, 1, 1, 1]
        # class 0: p=1, r=0.5, f1=2/3; class 1: p=2/3, r=1, f1=0.8
        assert ev.macro_f1(y_true, y_pred) == pytest.approx((2 / 3 + 0.8) / 2)

    def test_absent_prediction_is_zero(self):
        # class 0: p=0.5, r=1 -> f1=2/3; class 1: no predictions -> 0
        assert ev.macro_f1([0, 1], [0, 0]) == pytest.approx(1 / 3)
