"""Top-level RL task: per-sentence select/skip decisions over a bag.  The
policy state combines the estimator's sentence representations with running
aggregates of what has been selected and extracted so far; the bag-level
final reward is the mean log-likelihood of the noisy label over the selected
sentences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import nnkit
from .corpus import Sentence
from .estimator import CnnEstimator


@dataclass
class SelectorPolicy:
    """Linear-sigmoid policy over [current sentence repr | mean repr of
    selected sentences | relation one-hot | mean mention-word embedding]."""

    params: nnkit.ParamSet

    @classmethod
    def zeros(cls, dim: int) -> "SelectorPolicy":
        params = nnkit.ParamSet()
        params.add("w", np.zeros(dim))
        params.add("b", np.zeros(1))
        return cls(params)

    @classmethod
    def for_estimator(cls, est: CnnEstimator) -> "SelectorPolicy":
        return cls.zeros(2 * est.feature_maps + est.n_relations + est.word_dim)

    @property
    def w(self) -> np.ndarray:
        return self.params["w"].value

    @property
    def b(self) -> float:
        return float(self.params["b"].value[0])

    def save(self, path) -> None:
        nnkit.save_params(self.params, path)

    @classmethod
    def load(cls, path) -> "SelectorPolicy":
        return cls(nnkit.load_params(path))


@dataclass
class SelectorState:
    """Policy input at one bag position.  ``chosen_avg_repr`` and
    ``mention_avg`` are zero vectors before the first selection/extraction;
    ``mention_avg`` is standardized by the estimator's word scale when built.
    """

    current_repr: np.ndarray
    chosen_avg_repr: np.ndarray
    relation_onehot: np.ndarray
    mention_avg: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.current_repr, self.chosen_avg_repr, self.relation_onehot, self.mention_avg]
        )


def option_prob(state: SelectorState, policy: SelectorPolicy) -> float:
    """Probability of selecting the current sentence."""
    return nnkit.sigmoid(float(policy.w @ state.as_vector()) + policy.b)


def bag_final_reward(
    selected: list[Sentence],
    relation_id: int,
    estimator: CnnEstimator,
    empty_value: float | None = None,
) -> float:
    """Mean log-likelihood of the bag's relation over the selected sentences.

    An empty selection earns ``empty_value``; the default is log(1/n_r), the
    log-likelihood a uniform classifier would assign.
    """
    if not selected:
        if empty_value is None:
            return math.log(1.0 / estimator.n_relations)
        return empty_value
    total = sum(math.log(estimator.prob_of(s, relation_id)) for s in selected)
    return total / len(selected)


def write_selection_traces(traces, path) -> None:
    """Selection trace JSONL: one object per bag with its option sequence and
    bag-level final reward."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for trace in traces:
            fh.write(json.dumps(trace, ensure_ascii=False) + "\n")


def read_selection_traces(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def trace_record(bag_idx: int, options, final_reward: float) -> dict:
    return {"bag": bag_idx, "options": list(options), "final_reward": final_reward}
