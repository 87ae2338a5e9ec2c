"""Low-level RL task: a per-word keep/skip policy over a sentence, its
three-part delayed reward (class-likelihood drop on removal, span continuity,
distance to the entities), REINFORCE pretraining, greedy inference, and an
exhaustive subset-search oracle.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import nnkit
from .corpus import PAD_ID, Corpus, Sentence, normalized_surface, remove_tokens
from .estimator import CnnEstimator


@dataclass
class ExtractorPolicy:
    """Linear-sigmoid policy over [token encoding | mean chosen word
    embedding | relation one-hot]."""

    params: nnkit.ParamSet

    @classmethod
    def zeros(cls, dim: int) -> "ExtractorPolicy":
        params = nnkit.ParamSet()
        params.add("w", np.zeros(dim))
        params.add("b", np.zeros(1))
        return cls(params)

    @classmethod
    def for_estimator(cls, est: CnnEstimator) -> "ExtractorPolicy":
        return cls.zeros(est.encode_dim + est.word_dim + est.n_relations)

    @property
    def w(self) -> np.ndarray:
        return self.params["w"].value

    @property
    def b(self) -> float:
        return float(self.params["b"].value[0])

    def save(self, path) -> None:
        nnkit.save_params(self.params, path)

    @classmethod
    def load(cls, path) -> "ExtractorPolicy":
        return cls(nnkit.load_params(path))


@dataclass
class ExtractorState:
    """Policy input at one scan position: the current token's encoding, the
    mean embedding of the words kept so far (zeros before the first keep),
    and the relation one-hot.  The embedding-derived blocks are standardized
    by the estimator's scale factors at construction time.
    """

    current: np.ndarray
    chosen_avg: np.ndarray
    relation_onehot: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.current, self.chosen_avg, self.relation_onehot])


@dataclass
class ActionStep:
    """One non-forced keep/skip decision: policy state, action, and the
    probability of keeping under the policy at decision time."""

    state: np.ndarray
    action: int
    prob: float

    @property
    def log_prob(self) -> float:
        return nnkit.bernoulli_log_prob(self.action, self.prob)


@dataclass
class MentionResult:
    sentence: Sentence
    indices: list[int]
    surface: str
    reward: float

    def is_empty(self) -> bool:
        return not self.indices


def act_prob(state: ExtractorState, policy: ExtractorPolicy) -> float:
    return nnkit.sigmoid(float(policy.w @ state.as_vector()) + policy.b)


def mention_reward(
    sentence: Sentence,
    indices,
    estimator: CnnEstimator,
    lambda1: float,
    lambda2: float,
    empty_penalty: float = -1.0,
) -> float:
    """Delayed reward for an extracted index set.

    Three terms: the relative drop in the label's class likelihood when the
    mention words are deleted from the sentence, minus lambda1 times the span
    spread (k_last - k_first)/L, minus lambda2 times the mean summed distance
    of the mention words to the two entities.  An empty extraction earns the
    configured penalty instead.
    """
    if estimator is None:
        raise ValueError("estimator required")
    idx = sorted(indices)
    if not idx:
        return empty_penalty
    if sentence.head_idx in idx or sentence.tail_idx in idx:
        raise ValueError("mention indices may not include entity tokens")
    r = sentence.relation_id
    p_full = estimator.prob_of(sentence, r)
    p_removed = estimator.prob_of(remove_tokens(sentence, idx), r)
    discriminability = (p_full - p_removed) / p_full
    length = len(idx)
    continuity = (idx[-1] - idx[0]) / length
    distance = sum(
        abs(k - sentence.head_idx) + abs(k - sentence.tail_idx) for k in idx
    ) / length
    return discriminability - lambda1 * continuity - lambda2 * distance


class _RandomDecider:
    def __init__(self, rng):
        self.rng = rng

    def decide(self, p: float) -> int:
        return 1 if self.rng.random() < p else 0


class _GreedyDecider:
    def decide(self, p: float) -> int:
        return 1 if p > 0.5 else 0


def sample_mention(
    sentence: Sentence,
    policy: ExtractorPolicy,
    estimator: CnnEstimator,
    rng,
    mode: str = "sample",
    lambda1: float = 1.0,
    lambda2: float = 0.05,
    empty_penalty: float = -1.0,
    decider=None,
):
    """Scan tokens left to right, deciding keep/skip for each.

    Entity positions and PAD tokens are forced to skip with no decision
    recorded.  Returns (MentionResult, [ActionStep]); the mention's reward is
    already evaluated.
    """
    if decider is None:
        if mode == "greedy":
            decider = _GreedyDecider()
        elif mode == "sample":
            decider = _RandomDecider(rng)
        else:
            raise ValueError(f"unknown mode {mode!r}")

    encoded = estimator.encode(sentence) * estimator.encode_scale
    word_scale = estimator.word_scale
    onehot = np.zeros(estimator.n_relations)
    onehot[sentence.relation_id] = 1.0
    chosen_sum = np.zeros(estimator.word_dim)
    chosen: list[int] = []
    steps: list[ActionStep] = []
    for j, token_id in enumerate(sentence.token_ids):
        if j == sentence.head_idx or j == sentence.tail_idx or token_id == PAD_ID:
            continue
        if chosen:
            avg = chosen_sum * (word_scale / len(chosen))
        else:
            avg = np.zeros(estimator.word_dim)
        state = ExtractorState(encoded[j], avg, onehot)
        p = act_prob(state, policy)
        action = decider.decide(p)
        steps.append(ActionStep(state.as_vector(), action, p))
        if action == 1:
            chosen.append(j)
            chosen_sum = chosen_sum + estimator.word_embedding(token_id)
    reward = mention_reward(sentence, chosen, estimator, lambda1, lambda2, empty_penalty)
    mention = MentionResult(sentence, chosen, normalized_surface(sentence, chosen), reward)
    return mention, steps


def candidate_indices(sentence: Sentence) -> list[int]:
    """Token positions eligible for extraction: non-entity, non-PAD."""
    return [
        j
        for j, tid in enumerate(sentence.token_ids)
        if j != sentence.head_idx and j != sentence.tail_idx and tid != PAD_ID
    ]


def brute_force_best(
    sentence: Sentence,
    estimator: CnnEstimator,
    lambda1: float,
    lambda2: float,
    max_len: int | None = None,
    empty_penalty: float = -1.0,
) -> MentionResult:
    """Exhaustive search over index subsets (and the empty extraction) for
    the reward maximizer.  Ties break toward fewer words, then the leftmost
    first index.  Refuses sentences with more than 16 candidate tokens.
    """
    cands = candidate_indices(sentence)
    if len(cands) > 16:
        raise ValueError(f"{len(cands)} candidate tokens exceed the brute-force limit of 16")
    limit = len(cands) if max_len is None else min(max_len, len(cands))
    # Enumeration runs smallest size first and lexicographically within a
    # size, so keeping only strict improvements realizes the tie rules:
    # fewer words, then leftmost first index (empty beats equal rewards).
    best_idx: list[int] = []
    best_reward = empty_penalty
    for size in range(1, limit + 1):
        for combo in itertools.combinations(cands, size):
            reward = mention_reward(
                sentence, combo, estimator, lambda1, lambda2, empty_penalty
            )
            if reward > best_reward:
                best_idx = list(combo)
                best_reward = reward
    return MentionResult(
        sentence, best_idx, normalized_surface(sentence, best_idx), best_reward
    )


def pretrain_extractor(
    corpus: Corpus,
    policy: ExtractorPolicy,
    estimator: CnnEstimator,
    lambda1: float,
    lambda2: float,
    lr: float = 0.01,
    epochs: int = 5,
    samples_per_sentence: int = 1,
    seed: int = 0,
    empty_penalty: float = -1.0,
):
    """REINFORCE pretraining over every sentence of every bag (no selector):
    each sampled action shares the sentence's final reward as its return.

    Returns (policy, mean sampled reward per epoch).
    """
    rng = np.random.default_rng(seed)
    reward_log = []
    for _ in range(epochs):
        rewards = []
        for sentence in corpus.sentences():
            grads_w = np.zeros_like(policy.w)
            grads_b = 0.0
            for _ in range(samples_per_sentence):
                mention, steps = sample_mention(
                    sentence, policy, estimator, rng,
                    mode="sample", lambda1=lambda1, lambda2=lambda2,
                    empty_penalty=empty_penalty,
                )
                rewards.append(mention.reward)
                if steps:
                    gw, gb = nnkit.score_function_gradient(
                        [s.state for s in steps],
                        [s.action for s in steps],
                        [s.prob for s in steps],
                        [mention.reward] * len(steps),
                    )
                    grads_w += gw
                    grads_b += gb
            policy.params["w"].grad[...] = -grads_w / samples_per_sentence
            policy.params["b"].grad[...] = -grads_b / samples_per_sentence
            nnkit.sgd_step(policy.params, lr)
        reward_log.append(float(np.mean(rewards)) if rewards else 0.0)
    return policy, reward_log


def write_extractions(records, path) -> None:
    """Extraction output JSONL: one object per extraction with bag index,
    sentence index, relation name, token indices, surface, and reward."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_extractions(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def extraction_record(bag_idx: int, sent_idx: int, relation: str, mention: MentionResult) -> dict:
    return {
        "bag": bag_idx,
        "sentence": sent_idx,
        "relation": relation,
        "indices": list(mention.indices),
        "surface": mention.surface,
        "reward": mention.reward,
    }


def mentions_from_records(records, corpus: Corpus) -> list[MentionResult]:
    """Rebuild MentionResult objects from extraction JSONL rows against the
    corpus they were produced from."""
    out = []
    for rec in records:
        sentence = corpus.bags[rec["bag"]].sentences[rec["sentence"]]
        out.append(
            MentionResult(sentence, list(rec["indices"]), rec["surface"], rec["reward"])
        )
    return out
