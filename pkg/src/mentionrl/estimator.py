"""CNN relation classifier used as the reward model: word + position
embeddings, a width-3 convolution with max pooling, a tanh layer, and a
softmax output.  Trained once on the noisy labels, then frozen; the frozen
model supplies class likelihoods and sentence representations to the RL
components.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import nnkit
from .corpus import Corpus, N_POSITION_BUCKETS, Sentence, position_buckets


class FrozenEstimatorError(RuntimeError):
    """Raised when a training path is invoked on a frozen estimator."""


class CnnEstimator:
    """Relation classifier P(relation | sentence).

    Parameter entries: word_emb (V, word_dim), pos_head_emb / pos_tail_emb
    (61, pos_dim), conv_w (feature_maps, 3*encode_dim), conv_b, out_w
    (n_relations, feature_maps), out_b.
    """

    def __init__(
        self,
        vocab_size: int,
        n_relations: int,
        word_dim: int = 50,
        pos_dim: int = 5,
        feature_maps: int = 230,
        dropout_p: float = 0.5,
        seed: int = 0,
    ):
        self.word_dim = word_dim
        self.pos_dim = pos_dim
        self.feature_maps = feature_maps
        self.n_relations = n_relations
        self.dropout_p = dropout_p
        self.frozen = False
        self._cache: dict = {}
        self._encode_cache: dict = {}
        self._scales: tuple[float, float] | None = None

        rng = np.random.default_rng(seed)
        encode_dim = word_dim + 2 * pos_dim
        init = lambda shape, scale: rng.uniform(-scale, scale, size=shape)
        self.params = nnkit.ParamSet()
        self.params.add("word_emb", init((vocab_size, word_dim), 0.5 / word_dim))
        self.params.add("pos_head_emb", init((N_POSITION_BUCKETS, pos_dim), 0.5 / pos_dim))
        self.params.add("pos_tail_emb", init((N_POSITION_BUCKETS, pos_dim), 0.5 / pos_dim))
        self.params.add("conv_w", init((feature_maps, 3 * encode_dim), 1.0 / math.sqrt(3 * encode_dim)))
        self.params.add("conv_b", np.zeros(feature_maps))
        self.params.add("out_w", init((n_relations, feature_maps), 1.0 / math.sqrt(feature_maps)))
        self.params.add("out_b", np.zeros(n_relations))

    @property
    def encode_dim(self) -> int:
        return self.word_dim + 2 * self.pos_dim

    @property
    def vocab_size(self) -> int:
        return self.params["word_emb"].value.shape[0]

    @classmethod
    def from_params(cls, params: nnkit.ParamSet, dropout_p: float = 0.5, frozen: bool = False):
        """Rebuild an estimator from a checkpointed parameter set; dimensions
        are inferred from the stored shapes.
        """
        word_emb = params["word_emb"].value
        pos_emb = params["pos_head_emb"].value
        est = cls(
            vocab_size=word_emb.shape[0],
            n_relations=params["out_w"].value.shape[0],
            word_dim=word_emb.shape[1],
            pos_dim=pos_emb.shape[1],
            feature_maps=params["conv_w"].value.shape[0],
            dropout_p=dropout_p,
        )
        for name, p in est.params.items():
            p.value[...] = params[name].value
        est.frozen = frozen
        return est

    def save(self, path) -> None:
        nnkit.save_params(self.params, path)

    @classmethod
    def load(cls, path, frozen: bool = False):
        return cls.from_params(nnkit.load_params(path), frozen=frozen)

    def freeze(self) -> None:
        self.frozen = True
        self._cache = {}
        self._encode_cache = {}
        self._scales = None

    def word_embedding(self, token_id: int) -> np.ndarray:
        return self.params["word_emb"].value[token_id]

    def _compute_scales(self) -> tuple[float, float]:
        word = self.params["word_emb"].value
        enc = np.concatenate([
            word.ravel(),
            self.params["pos_head_emb"].value.ravel(),
            self.params["pos_tail_emb"].value.ravel(),
        ])
        scale = lambda arr: float(
            np.clip(1.0 / max(np.sqrt(np.mean(np.square(arr))), 1e-8), 1.0, 100.0)
        )
        return scale(enc), scale(word)

    @property
    def encode_scale(self) -> float:
        """Standardization factor (1/RMS of embedding coordinates, clipped to
        [1, 100]) applied to encode rows when they enter policy states, so
        policy features sit at unit scale for plain SGD."""
        if self.frozen:
            if self._scales is None:
                self._scales = self._compute_scales()
            return self._scales[0]
        return self._compute_scales()[0]

    @property
    def word_scale(self) -> float:
        """Standardization factor for policy-state blocks averaging word
        embeddings; same construction as ``encode_scale``."""
        if self.frozen:
            if self._scales is None:
                self._scales = self._compute_scales()
            return self._scales[1]
        return self._compute_scales()[1]

    def encode(self, sentence: Sentence) -> np.ndarray:
        """Input matrix, one row per token: word embedding concatenated with
        the two position-bucket embeddings (relative to head and to tail).
        """
        key = None
        if self.frozen:
            key = (tuple(sentence.token_ids), sentence.head_idx, sentence.tail_idx)
            hit = self._encode_cache.get(key)
            if hit is not None:
                return hit
        feats = position_buckets(sentence)
        word = self.params["word_emb"].value[sentence.token_ids]
        head = self.params["pos_head_emb"].value[feats.head_buckets]
        tail = self.params["pos_tail_emb"].value[feats.tail_buckets]
        out = np.hstack([word, head, tail])
        if key is not None:
            self._encode_cache[key] = out
        return out

    def _forward(self, sentence: Sentence, dropout_mask: np.ndarray | None = None):
        x = self.encode(sentence)
        pooled, argmax = nnkit.conv3_maxpool(
            x, self.params["conv_w"].value, self.params["conv_b"].value
        )
        rep = np.tanh(pooled)
        dropped = rep if dropout_mask is None else rep * dropout_mask / (1.0 - self.dropout_p)
        logits = self.params["out_w"].value @ dropped + self.params["out_b"].value
        probs = nnkit.softmax(logits)
        return x, pooled, argmax, rep, dropped, probs

    def forward(self, sentence: Sentence):
        """Inference pass (no dropout): (probs, pooled, repr)."""
        if self.frozen:
            key = (tuple(sentence.token_ids), sentence.head_idx, sentence.tail_idx)
            hit = self._cache.get(key)
            if hit is None:
                _, pooled, _, rep, _, probs = self._forward(sentence)
                hit = (probs, pooled, rep)
                self._cache[key] = hit
            return hit
        _, pooled, _, rep, _, probs = self._forward(sentence)
        return probs, pooled, rep

    def repr_of(self, sentence: Sentence) -> np.ndarray:
        return self.forward(sentence)[2]

    def prob_of(self, sentence: Sentence, relation_id: int) -> float:
        """Class likelihood of ``relation_id``, floored at 1e-12."""
        probs = self.forward(sentence)[0]
        if not 0 <= relation_id < self.n_relations:
            raise ValueError(f"relation {relation_id} out of range")
        return max(float(probs[relation_id]), nnkit.PROB_FLOOR)

    def loss(self, sentence: Sentence) -> float:
        """Cross-entropy against the sentence's noisy relation label."""
        probs = self._forward(sentence)[5]
        return nnkit.cross_entropy(probs, sentence.relation_id)

    def accumulate_gradients(self, sentence: Sentence, dropout_mask: np.ndarray | None = None) -> float:
        """Add the cross-entropy gradients for one sentence into the stored
        grads (embeddings included) and return the loss.
        """
        if self.frozen:
            raise FrozenEstimatorError("estimator is frozen")
        x, pooled, argmax, rep, dropped, probs = self._forward(sentence, dropout_mask)
        loss = nnkit.cross_entropy(probs, sentence.relation_id)

        d_logits = nnkit.softmax_xent_grad(probs, sentence.relation_id)
        p = self.params
        p["out_w"].grad += np.outer(d_logits, dropped)
        p["out_b"].grad += d_logits
        d_dropped = p["out_w"].value.T @ d_logits
        d_rep = d_dropped if dropout_mask is None else d_dropped * dropout_mask / (1.0 - self.dropout_p)
        d_pooled = d_rep * (1.0 - rep * rep)
        dx, dw, db = nnkit.conv3_maxpool_backward(x, p["conv_w"].value, argmax, d_pooled)
        p["conv_w"].grad += dw
        p["conv_b"].grad += db

        feats = position_buckets(sentence)
        dwv = dx[:, : self.word_dim]
        dhv = dx[:, self.word_dim : self.word_dim + self.pos_dim]
        dtv = dx[:, self.word_dim + self.pos_dim :]
        np.add.at(p["word_emb"].grad, sentence.token_ids, dwv)
        np.add.at(p["pos_head_emb"].grad, feats.head_buckets, dhv)
        np.add.at(p["pos_tail_emb"].grad, feats.tail_buckets, dtv)
        return loss

    def mean_loss(self, sentences: Sequence[Sentence]) -> float:
        return float(np.mean([self.loss(s) for s in sentences]))


def train_estimator(
    corpus: Corpus,
    lr: float = 0.02,
    batch_size: int = 160,
    epochs: int = 25,
    dropout: float = 0.5,
    seed: int = 0,
    word_dim: int = 50,
    pos_dim: int = 5,
    feature_maps: int = 230,
    estimator: CnnEstimator | None = None,
):
    """Train the relation classifier on every sentence of ``corpus`` (noisy
    labels included) and freeze it.

    Returns (estimator, loss_log) where loss_log[0] is the mean loss before
    any update and loss_log[i] the mean training loss of epoch i.
    """
    sentences = list(corpus.sentences())
    if not sentences:
        raise ValueError("empty corpus")
    if estimator is None:
        estimator = CnnEstimator(
            vocab_size=len(corpus.vocabulary),
            n_relations=len(corpus.relations),
            word_dim=word_dim,
            pos_dim=pos_dim,
            feature_maps=feature_maps,
            dropout_p=dropout,
            seed=seed,
        )
    if estimator.frozen:
        raise FrozenEstimatorError("estimator is frozen")
    estimator.dropout_p = dropout

    rng = np.random.default_rng(seed)
    loss_log = [estimator.mean_loss(sentences)]
    order = np.arange(len(sentences))
    for _ in range(epochs):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            for idx in batch:
                mask = None
                if dropout > 0.0:
                    mask = (rng.random(estimator.feature_maps) >= dropout).astype(float)
                epoch_losses.append(estimator.accumulate_gradients(sentences[idx], mask))
            nnkit.sgd_step(estimator.params, lr / len(batch))
        loss_log.append(float(np.mean(epoch_losses)))
    estimator.freeze()
    return estimator, loss_log
