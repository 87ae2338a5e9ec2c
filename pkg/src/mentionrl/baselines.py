"""Search baselines: exhaustive n-gram span search under the extraction
reward, and a random-span extractor used as a floor in the downstream
feature experiment.  The selector-free RL ablation is the trainer's single
mode and needs no code here.
"""

from __future__ import annotations

import numpy as np

from .corpus import Sentence, normalized_surface
from .estimator import CnnEstimator
from .extractor import MentionResult, candidate_indices, mention_reward


def ngram_spans(sentence: Sentence, max_n: int = 3) -> list[list[int]]:
    """Contiguous spans of length 1..max_n containing no entity or PAD
    token, in (start, length) order."""
    cands = set(candidate_indices(sentence))
    spans = []
    n_tokens = len(sentence.tokens)
    for start in range(n_tokens):
        for length in range(1, max_n + 1):
            span = list(range(start, start + length))
            if span[-1] >= n_tokens or not all(j in cands for j in span):
                break
            spans.append(span)
    return spans


def ngram_extract(
    sentence: Sentence,
    estimator: CnnEstimator,
    lambda1: float,
    lambda2: float,
    max_n: int = 3,
    empty_penalty: float = -1.0,
) -> MentionResult:
    """Best contiguous span of up to ``max_n`` words under the extraction
    reward.  Ties break toward shorter spans then leftmost start; if no span
    beats the empty-extraction penalty the result is empty.
    """
    best_idx: list[int] = []
    best_reward = empty_penalty
    # Shortest length first, leftmost first within a length, so strict
    # improvement implements the tie rules.
    spans = sorted(ngram_spans(sentence, max_n), key=lambda s: (len(s), s[0]))
    for span in spans:
        reward = mention_reward(
            sentence, span, estimator, lambda1, lambda2, empty_penalty
        )
        if reward > best_reward:
            best_idx = span
            best_reward = reward
    return MentionResult(
        sentence, best_idx, normalized_surface(sentence, best_idx), best_reward
    )


def random_span_extract(
    sentence: Sentence,
    estimator: CnnEstimator,
    rng,
    lambda1: float,
    lambda2: float,
    max_n: int = 3,
    empty_penalty: float = -1.0,
) -> MentionResult:
    """Uniformly random candidate span; the uninformed floor for feature
    utility comparisons."""
    spans = ngram_spans(sentence, max_n)
    if not spans:
        return MentionResult(sentence, [], "", empty_penalty)
    span = spans[int(rng.integers(len(spans)))]
    reward = mention_reward(sentence, span, estimator, lambda1, lambda2, empty_penalty)
    return MentionResult(sentence, span, normalized_surface(sentence, span), reward)
