"""Joint hierarchical training: per-bag episode rollout, return computation,
and REINFORCE updates for the sentence selector and the mention extractor.
Also houses the selector-free single-RL mode, greedy inference over a bag,
and an exact expected-gradient oracle obtained by enumerating every
option/action assignment of a small bag.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import nnkit
from .corpus import Bag, Corpus, Sentence
from .estimator import CnnEstimator
from .extractor import (
    ActionStep,
    ExtractorPolicy,
    MentionResult,
    sample_mention,
)
from .selector import SelectorPolicy, SelectorState, bag_final_reward, option_prob


@dataclass
class TrainConfig:
    lambda1: float = 0.4
    lambda2: float = 0.02
    gamma: float = 0.999
    lr: float = 0.001
    episodes: int = 50
    trajectories_per_bag: int = 5
    mode: str = "hrl"
    seed: int = 0
    empty_mention_penalty: float = -1.0
    empty_selection_value: float | None = None
    use_baseline: bool = False
    baseline_momentum: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.lr < 0.0:
            raise ValueError("lr must be non-negative")
        if self.mode not in ("hrl", "single"):
            raise ValueError(f"unknown mode {self.mode!r}")


# Paper hyperparameter presets; the noisy set is the default throughout.
PRESETS = {
    "clean": dict(lambda1=1.0, lambda2=0.05, pretrain_lr=0.01, pretrain_epochs=50,
                  hrl_lr=0.01, hrl_episodes=50),
    "noisy": dict(lambda1=0.4, lambda2=0.02, pretrain_lr=0.01, pretrain_epochs=5,
                  hrl_lr=0.001, hrl_episodes=50),
}


@dataclass
class ExtractionStep:
    """Low-level episode record for one selected sentence."""

    sentence_index: int
    steps: list[ActionStep]
    mention: MentionResult
    reward: float  # the extractor's delayed final reward


@dataclass
class SelectorStep:
    """One top-level decision: state/option/prob are None in single mode
    where selection is forced."""

    state: np.ndarray | None
    option: int
    prob: float | None
    intermediate_reward: float
    extraction: ExtractionStep | None

    @property
    def log_prob(self) -> float | None:
        if self.prob is None:
            return None
        return nnkit.bernoulli_log_prob(self.option, self.prob)


@dataclass
class Trajectory:
    steps: list[SelectorStep]
    final_reward: float

    def probability(self) -> float:
        """Joint probability of every sampled decision in this trajectory."""
        p = 1.0
        for step in self.steps:
            if step.prob is not None:
                p *= step.prob if step.option == 1 else 1.0 - step.prob
            if step.extraction is not None:
                for a in step.extraction.steps:
                    p *= a.prob if a.action == 1 else 1.0 - a.prob
        return p


class _RandomDecider:
    def __init__(self, rng):
        self.rng = rng

    def decide(self, p: float) -> int:
        return 1 if self.rng.random() < p else 0


class _GreedyDecider:
    def decide(self, p: float) -> int:
        return 1 if p > 0.5 else 0


class NeedDecision(Exception):
    """Raised by _ForcedDecider when its preset decisions are exhausted."""


class _ForcedDecider:
    def __init__(self, bits):
        self.bits = bits
        self.used = 0

    def decide(self, p: float) -> int:
        if self.used >= len(self.bits):
            raise NeedDecision()
        bit = self.bits[self.used]
        self.used += 1
        return bit


def run_bag_episode(
    bag: Bag,
    selector: SelectorPolicy,
    extractor: ExtractorPolicy,
    estimator: CnnEstimator,
    config: TrainConfig,
    rng,
    decider=None,
    extractor_lr: float | None = None,
    extractor_baseline=None,
) -> Trajectory:
    """Roll out one episode over the bag's sentences in order.

    Each sentence gets a select/skip option (forced to select in single
    mode); a selected sentence runs the word-level extraction episode, whose
    final reward becomes the selector's intermediate reward at that step.
    When ``extractor_lr`` is set, the extractor policy is updated right after
    each selected sentence, matching the training loop's update placement.
    """
    if not bag.sentences:
        raise ValueError("empty bag")
    if decider is None:
        decider = _RandomDecider(rng)

    n_rel = estimator.n_relations
    onehot = np.zeros(n_rel)
    onehot[bag.relation_id] = 1.0
    word_scale = estimator.word_scale

    selected: list[Sentence] = []
    repr_sum = np.zeros(estimator.feature_maps)
    mention_word_sum = np.zeros(estimator.word_dim)
    mention_word_count = 0
    steps: list[SelectorStep] = []

    for t, sentence in enumerate(bag.sentences):
        if config.mode == "single":
            option, prob, state_vec = 1, None, None
        else:
            chosen_avg = repr_sum / len(selected) if selected else np.zeros_like(repr_sum)
            if mention_word_count:
                mention_avg = mention_word_sum * (word_scale / mention_word_count)
            else:
                mention_avg = np.zeros(estimator.word_dim)
            state = SelectorState(
                estimator.repr_of(sentence), chosen_avg, onehot, mention_avg
            )
            prob = option_prob(state, selector)
            option = decider.decide(prob)
            state_vec = state.as_vector()

        extraction = None
        r_t = 0.0
        if option == 1:
            mention, action_steps = sample_mention(
                sentence, extractor, estimator, rng,
                mode="sample",
                lambda1=config.lambda1,
                lambda2=config.lambda2,
                empty_penalty=config.empty_mention_penalty,
                decider=decider,
            )
            extraction = ExtractionStep(t, action_steps, mention, mention.reward)
            r_t = mention.reward
            if extractor_lr is not None:
                reinforce_update_extractor(
                    [extraction], extractor, extractor_lr, baseline=extractor_baseline
                )
            selected.append(sentence)
            repr_sum = repr_sum + estimator.repr_of(sentence)
            for k in mention.indices:
                mention_word_sum = mention_word_sum + estimator.word_embedding(
                    sentence.token_ids[k]
                )
            mention_word_count += len(mention.indices)
        steps.append(SelectorStep(state_vec, option, prob, r_t, extraction))

    final = bag_final_reward(
        selected, bag.relation_id, estimator, config.empty_selection_value
    )
    return Trajectory(steps, final)


def selector_return(trajectory: Trajectory, t: int, gamma: float) -> float:
    """Return credited to the option at step ``t``: the undiscounted bag
    final reward plus the discounted sum of extraction rewards from step
    ``t`` onward (skipped sentences contribute zero).
    """
    steps = trajectory.steps
    if not 0 <= t < len(steps):
        raise ValueError(f"step {t} out of range for {len(steps)} steps")
    total = trajectory.final_reward
    weight = 1.0
    for k in range(t, len(steps)):
        total += weight * steps[k].intermediate_reward
        weight *= gamma
    return total


def trajectory_selector_gradient(
    trajectory: Trajectory, gamma: float, dim: int, baseline: float = 0.0
):
    """Score-function gradient contribution of one trajectory for the
    selector: sum over steps of (option - prob) * state * return."""
    gw = np.zeros(dim)
    gb = 0.0
    for t, step in enumerate(trajectory.steps):
        if step.prob is None:
            continue
        ret = selector_return(trajectory, t, gamma) - baseline
        z = nnkit.bernoulli_score(step.option, step.prob) * ret
        gw += z * step.state
        gb += z
    return gw, gb


def trajectory_extractor_gradient(trajectory: Trajectory, dim: int, baseline: float = 0.0):
    """Extractor counterpart: every action in a sentence's sequence shares
    the sentence's final extraction reward as its return."""
    gw = np.zeros(dim)
    gb = 0.0
    for step in trajectory.steps:
        if step.extraction is None or not step.extraction.steps:
            continue
        ret = step.extraction.reward - baseline
        for a in step.extraction.steps:
            z = nnkit.bernoulli_score(a.action, a.prob) * ret
            gw += z * a.state
            gb += z
    return gw, gb


def reinforce_update_selector(
    trajectories: list[Trajectory],
    policy: SelectorPolicy,
    gamma: float,
    lr: float,
    baseline=None,
) -> None:
    """Gradient ascent on the expected selector return, averaged over the
    sampled trajectories (implemented as SGD on the negated gradient)."""
    dim = policy.w.size
    gw = np.zeros(dim)
    gb = 0.0
    for traj in trajectories:
        b = baseline.value if baseline is not None else 0.0
        tw, tb = trajectory_selector_gradient(traj, gamma, dim, b)
        gw += tw
        gb += tb
        if baseline is not None:
            for t, step in enumerate(traj.steps):
                if step.prob is not None:
                    baseline.update(selector_return(traj, t, gamma))
    n = max(len(trajectories), 1)
    policy.params["w"].grad[...] = -gw / n
    policy.params["b"].grad[...] = -gb / n
    nnkit.sgd_step(policy.params, lr)


def reinforce_update_extractor(
    extractions: list[ExtractionStep],
    policy: ExtractorPolicy,
    lr: float,
    baseline=None,
) -> None:
    """Gradient ascent for the extractor over one or more low-level episodes
    (each action's return is its sentence's final extraction reward)."""
    dim = policy.w.size
    gw = np.zeros(dim)
    gb = 0.0
    for record in extractions:
        b = baseline.value if baseline is not None else 0.0
        ret = record.reward - b
        if record.steps:
            tw, tb = nnkit.score_function_gradient(
                [a.state for a in record.steps],
                [a.action for a in record.steps],
                [a.prob for a in record.steps],
                [ret] * len(record.steps),
            )
            gw += tw
            gb += tb
        if baseline is not None:
            baseline.update(record.reward)
    n = max(len(extractions), 1)
    policy.params["w"].grad[...] = -gw / n
    policy.params["b"].grad[...] = -gb / n
    nnkit.sgd_step(policy.params, lr)


class MovingBaseline:
    """Exponential moving average of observed returns; optional variance
    reduction for the REINFORCE updates (off by default)."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.value = 0.0
        self._initialized = False

    def update(self, reward: float) -> None:
        if not self._initialized:
            self.value = reward
            self._initialized = True
        else:
            self.value = self.momentum * self.value + (1.0 - self.momentum) * reward


@dataclass
class ExactGradients:
    selector_w: np.ndarray
    selector_b: float
    extractor_w: np.ndarray
    extractor_b: float
    total_probability: float
    n_trajectories: int


def count_free_decisions(bag: Bag, config: TrainConfig) -> int:
    """Worst-case binary decisions an episode over this bag can take."""
    from .extractor import candidate_indices

    options = 0 if config.mode == "single" else len(bag.sentences)
    return options + sum(len(candidate_indices(s)) for s in bag.sentences)


def exhaustive_policy_gradient(
    bag: Bag,
    selector: SelectorPolicy,
    extractor: ExtractorPolicy,
    estimator: CnnEstimator,
    config: TrainConfig,
) -> ExactGradients:
    """Exact policy gradients for both levels by enumerating every
    option/action assignment of the bag, weighting each trajectory's
    score-function terms by its probability.  Limited to 16 binary decisions.
    """
    n_free = count_free_decisions(bag, config)
    if n_free > 16:
        raise ValueError(f"{n_free} binary decisions exceed the enumeration limit of 16")

    sel_dim = selector.w.size
    ext_dim = extractor.w.size
    gw_h = np.zeros(sel_dim)
    gb_h = 0.0
    gw_l = np.zeros(ext_dim)
    gb_l = 0.0
    total_p = 0.0
    n_traj = 0

    stack: list[tuple[int, ...]] = [()]
    while stack:
        prefix = stack.pop()
        decider = _ForcedDecider(prefix)
        try:
            traj = run_bag_episode(
                bag, selector, extractor, estimator, config, rng=None, decider=decider
            )
        except NeedDecision:
            stack.append(prefix + (0,))
            stack.append(prefix + (1,))
            continue
        p = traj.probability()
        tw, tb = trajectory_selector_gradient(traj, config.gamma, sel_dim)
        gw_h += p * tw
        gb_h += p * tb
        tw, tb = trajectory_extractor_gradient(traj, ext_dim)
        gw_l += p * tw
        gb_l += p * tb
        total_p += p
        n_traj += 1

    return ExactGradients(gw_h, gb_h, gw_l, gb_l, total_p, n_traj)


def train_hrl(
    corpus: Corpus,
    selector: SelectorPolicy,
    extractor: ExtractorPolicy,
    estimator: CnnEstimator,
    config: TrainConfig,
):
    """Hierarchical training loop: for every episode and bag, sample
    ``trajectories_per_bag`` rollouts (the extractor updates after each
    selected sentence inside the rollout); the selector updates once per bag
    from all its sampled trajectories.  Single mode forces every selection
    and never touches the selector.

    Returns (selector, extractor, metrics) with one metrics row per episode.
    """
    rng = np.random.default_rng(config.seed)
    baseline_h = MovingBaseline(config.baseline_momentum) if config.use_baseline else None
    baseline_l = MovingBaseline(config.baseline_momentum) if config.use_baseline else None
    metrics = []
    for episode in range(config.episodes):
        final_rewards = []
        extraction_rewards = []
        sel_counts = {False: [0, 0], True: [0, 0]}  # is_noise -> [selected, seen]
        for bag in corpus.bags:
            trajectories = []
            for _ in range(config.trajectories_per_bag):
                traj = run_bag_episode(
                    bag, selector, extractor, estimator, config, rng,
                    extractor_lr=config.lr,
                    extractor_baseline=baseline_l,
                )
                trajectories.append(traj)
                final_rewards.append(traj.final_reward)
                for step, sentence in zip(traj.steps, bag.sentences):
                    if step.extraction is not None:
                        extraction_rewards.append(step.extraction.reward)
                    if sentence.is_noise is not None:
                        sel_counts[sentence.is_noise][0] += step.option
                        sel_counts[sentence.is_noise][1] += 1
            if config.mode != "single":
                reinforce_update_selector(
                    trajectories, selector, config.gamma, config.lr, baseline=baseline_h
                )
        rate = lambda c: c[0] / c[1] if c[1] else float("nan")
        metrics.append(
            {
                "episode": episode,
                "mean_final_reward_h": float(np.mean(final_rewards)),
                "mean_reward_l": float(np.mean(extraction_rewards)) if extraction_rewards else 0.0,
                "selection_rate_positive": rate(sel_counts[False]),
                "selection_rate_noise": rate(sel_counts[True]),
            }
        )
    return selector, extractor, metrics


METRIC_COLUMNS = [
    "episode",
    "mean_final_reward_h",
    "mean_reward_l",
    "selection_rate_positive",
    "selection_rate_noise",
]


def write_metrics_csv(metrics: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in metrics:
            writer.writerow({k: row[k] for k in METRIC_COLUMNS})


def greedy_rollout(
    bag: Bag,
    selector: SelectorPolicy | None,
    extractor: ExtractorPolicy,
    estimator: CnnEstimator,
    config: TrainConfig,
) -> Trajectory:
    """Deterministic inference over a bag: options and actions take their
    higher-probability branch.  Without a selector every sentence is
    processed (single mode)."""
    cfg = config if selector is not None else _as_single(config)
    sel = selector if selector is not None else SelectorPolicy.zeros(1)
    return run_bag_episode(
        bag, sel, extractor, estimator, cfg, rng=None, decider=_GreedyDecider()
    )


def _as_single(config: TrainConfig) -> TrainConfig:
    from dataclasses import replace

    return replace(config, mode="single")
