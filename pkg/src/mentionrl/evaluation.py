"""Evaluation: sentence-level extraction accuracy against planted gold,
mention-level Precision@K over ranked lexicons, selector precision/recall on
noise flags, and the downstream utility experiment (binary mention-presence
features fed to a from-scratch multinomial logistic regression).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nnkit
from .corpus import Corpus, Sentence, matches_gold
from .extractor import MentionResult
from .ranking import Lexicon


@dataclass
class SentenceAccuracy:
    value: float
    n_extracted: int
    n_correct: int
    undefined: bool  # true when nothing was extracted anywhere


def sentence_accuracy(extractions: list[MentionResult], corpus: Corpus) -> SentenceAccuracy:
    """Fraction of non-empty extractions that are acceptable: the sentence is
    not noise and the extracted index set matches a planted mention or one of
    its head-anchored prefixes.  Extracting anything from a noise sentence is
    incorrect.  With zero extractions the accuracy is reported as 0 with the
    undefined flag set.
    """
    extracted = 0
    correct = 0
    for mention in extractions:
        if mention.is_empty():
            continue
        sentence = mention.sentence
        if sentence.gold_mentions is None:
            raise ValueError("corpus lacks gold mention annotations")
        extracted += 1
        if not sentence.is_noise and matches_gold(mention.indices, sentence.gold_mentions):
            correct += 1
    if extracted == 0:
        return SentenceAccuracy(0.0, 0, 0, True)
    return SentenceAccuracy(correct / extracted, extracted, correct, False)


def precision_at_k(lexicon: Lexicon, gold_lexicons: dict[int, set], k: int) -> float:
    """Average over relations of the fraction of the top-min(k, length)
    lexicon surfaces present in the relation's gold surface set; a relation
    with an empty lexicon contributes zero.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold_lexicons:
        return 0.0
    per_relation = []
    for rel, gold in gold_lexicons.items():
        surfaces = lexicon.surfaces(rel)[:k]
        if not surfaces:
            per_relation.append(0.0)
            continue
        hits = sum(1 for s in surfaces if s in gold)
        per_relation.append(hits / len(surfaces))
    return float(np.mean(per_relation))


def selector_metrics(traces: list[dict], corpus: Corpus) -> dict:
    """Precision/recall of 'selected' as a prediction of 'not noise'.
    ``traces`` rows carry a bag index and its option sequence.
    """
    tp = fp = fn = 0
    for trace in traces:
        bag = corpus.bags[trace["bag"]]
        for option, sentence in zip(trace["options"], bag.sentences):
            if sentence.is_noise is None:
                raise ValueError("corpus lacks noise flags")
            if option == 1 and not sentence.is_noise:
                tp += 1
            elif option == 1 and sentence.is_noise:
                fp += 1
            elif option == 0 and not sentence.is_noise:
                fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return {"precision": precision, "recall": recall}


def mention_feature_vector(sentence: Sentence, lexicon: Lexicon) -> np.ndarray:
    """Binary vector: bit i set iff some lexicon mention of relation i occurs
    as a contiguous token subsequence (case-folded) of the sentence."""
    tokens = [t.lower() for t in sentence.tokens]
    bits = np.zeros(lexicon.n_relations)
    for rel in range(lexicon.n_relations):
        for surface in lexicon.surfaces(rel):
            words = surface.split(" ")
            if _contains_run(tokens, words):
                bits[rel] = 1.0
                break
    return bits


def _contains_run(tokens: list[str], words: list[str]) -> bool:
    if not words or len(words) > len(tokens):
        return False
    for start in range(len(tokens) - len(words) + 1):
        if tokens[start : start + len(words)] == words:
            return True
    return False


def feature_matrix(sentences: list[Sentence], lexicon: Lexicon):
    x = np.array([mention_feature_vector(s, lexicon) for s in sentences])
    y = np.array([s.relation_id for s in sentences])
    return x, y


def macro_f1(y_true, y_pred, labels=None) -> float:
    """Macro-averaged F1 over the classes present in the gold labels
    (0/0 per-class F1 counts as 0)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if labels is None:
        labels = sorted(set(int(v) for v in y_true))
    scores = []
    for label in labels:
        tp = int(np.sum((y_pred == label) & (y_true == label)))
        fp = int(np.sum((y_pred == label) & (y_true != label)))
        fn = int(np.sum((y_pred != label) & (y_true == label)))
        if tp == 0:
            scores.append(0.0)
            continue
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores)) if scores else 0.0


def logreg_classify(
    train_x,
    train_y,
    test_x,
    test_y,
    lr: float = 0.5,
    epochs: int = 200,
    batch_size: int = 32,
    seed: int = 0,
) -> float:
    """Multinomial logistic regression (softmax + cross-entropy + seeded
    minibatch SGD) on binary feature vectors; returns macro-F1 on the test
    split.
    """
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=int)
    if train_x.size == 0 or len(test_y) == 0:
        raise ValueError("empty train or test split")
    classes = sorted(set(int(v) for v in train_y))
    if len(classes) < 2:
        raise ValueError("need at least two classes in the training labels")
    n_classes = max(classes) + 1
    n_features = train_x.shape[1]

    rng = np.random.default_rng(seed)
    weights = np.zeros((n_classes, n_features))
    bias = np.zeros(n_classes)
    order = np.arange(len(train_x))
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            xb, yb = train_x[batch], train_y[batch]
            logits = xb @ weights.T + bias
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            probs = e / e.sum(axis=1, keepdims=True)
            grad = probs
            grad[np.arange(len(batch)), yb] -= 1.0
            grad /= len(batch)
            weights -= lr * (grad.T @ xb)
            bias -= lr * grad.sum(axis=0)

    test_x = np.asarray(test_x, dtype=float)
    logits = test_x @ weights.T + bias
    preds = logits.argmax(axis=1)
    return macro_f1(test_y, preds)
